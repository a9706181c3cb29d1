//! Fault injection and image-wise vulnerability measurement for object
//! detectors.
//!
//! The crate covers bit-level corruption of 32-bit floats, box geometry and
//! occupancy masks, optimal prediction/ground-truth matching, average
//! precision, silent/detectable corruption rates with severity features,
//! pixel-wise persistence tracking, a small analytic convolutional detector
//! to inject into, and campaign orchestration with CSV/JSON reporting.

pub mod ap_eval;
pub mod campaign;
pub mod error;
pub mod fault_model;
pub mod geometry;
pub mod hungarian;
pub mod ivmod_metrics;
pub mod matching;
pub mod persistence;
pub mod toy_detector;

pub use error::{Error, Result};
pub use fault_model::{
    apply_fault, classify_value, sample_fault, BitPolicy, BitPosition, FaultDescriptor, FaultMode,
    FaultTarget, ShapeCatalog, ValueClass,
};
pub use geometry::{iou, mask_diff, nms, rasterize, BBox, Detection, OccupancyMask};
pub use ivmod_metrics::{classify_image, rates, severity, ImageEval, SdcReport, Verdict};
pub use matching::{assign, CategoryPolicy, MatchOutcome};
pub use persistence::{track, TrackerConfig};

//! Campaign configuration, orchestration, record ingestion and reporting.
//!
//! Injections are independent work items, each with its own random stream
//! derived from the campaign seed and its index. They may run on any number
//! of worker threads; results are gathered in index order, so reports do
//! not depend on the worker count.

pub mod config;
pub mod records;
pub mod report;
pub mod runner;

use std::path::{Path, PathBuf};

pub use config::{CampaignConfig, CampaignMode, IngestPaths, SimulationSettings, TrackerSettings};
pub use records::{read_records, read_records_file, write_records, DetectionRecord};
pub use report::WriteReport;
pub use runner::{
    ingest_and_score, run_ingest, run_permanent, run_simulation, run_transient, IngestReport,
    PermanentReport, SimulationReport, TransientReport,
};

use crate::error::Result;

/// Runs the campaign described by `cfg` and writes its report into `out`.
pub fn run_to_dir(cfg: &CampaignConfig, out: &Path) -> Result<Vec<PathBuf>> {
    match cfg.mode {
        CampaignMode::Transient => run_transient(cfg)?.write_to(out),
        CampaignMode::Permanent => run_permanent(cfg)?.write_to(out),
        CampaignMode::Ingest => run_ingest(cfg)?.write_to(out),
        CampaignMode::SimulatePr => run_simulation(cfg)?.write_to(out),
    }
}

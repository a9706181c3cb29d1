use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ap_eval::{Perturbation, SyntheticSetConfig};
use crate::error::{Error, Result};
use crate::fault_model::{BitPolicy, FaultMode, FaultTarget};
use crate::matching::{CategoryPolicy, DEFAULT_IOU_THRESHOLD};
use crate::persistence::TrackerConfig;
use crate::toy_detector::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignMode {
    Transient,
    Permanent,
    Ingest,
    SimulatePr,
}

impl CampaignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CampaignMode::Transient => "transient",
            CampaignMode::Permanent => "permanent",
            CampaignMode::Ingest => "ingest",
            CampaignMode::SimulatePr => "simulate_pr",
        }
    }
}

/// M/N tracker settings shared by both blob kinds; coasting is set per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSettings {
    pub m: usize,
    pub n: usize,
    pub vicinity_px: usize,
    pub coast_fp: bool,
    pub coast_fn: bool,
}

impl Default for TrackerSettings {
    fn default() -> Self {
        let d = TrackerConfig::fp_default();
        TrackerSettings {
            m: d.m,
            n: d.n,
            vicinity_px: d.vicinity_px,
            coast_fp: true,
            coast_fn: false,
        }
    }
}

impl TrackerSettings {
    pub fn fp(&self) -> TrackerConfig {
        TrackerConfig {
            m: self.m,
            n: self.n,
            vicinity_px: self.vicinity_px,
            coasting: self.coast_fp,
        }
    }

    pub fn fn_(&self) -> TrackerConfig {
        TrackerConfig {
            coasting: self.coast_fn,
            ..self.fp()
        }
    }
}

/// Paths of the two record files scored by the ingest mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestPaths {
    pub orig: PathBuf,
    pub corr: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub n_objects: usize,
    pub p_tp: f64,
    pub fp_rate: f64,
    pub conf_range: (f64, f64),
    pub perturbations: Vec<Perturbation>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        let base = SyntheticSetConfig::default();
        SimulationSettings {
            n_objects: base.n_objects,
            p_tp: base.p_tp,
            fp_rate: base.fp_rate,
            conf_range: base.conf_range,
            perturbations: vec![
                Perturbation::AddFps {
                    count: 500,
                    conf_range: (0.0, 0.2),
                },
                Perturbation::AddFps {
                    count: 100,
                    conf_range: (0.9, 1.0),
                },
                Perturbation::RemoveTps { count: 10 },
            ],
        }
    }
}

/// A whole campaign as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub mode: CampaignMode,
    /// Mandatory; every random draw derives from it.
    pub seed: Option<u64>,
    pub n_injections: usize,
    pub target: FaultTarget,
    pub bit_policy: BitPolicy,
    /// Defaults to a transient flip for transient campaigns and stuck-at-1
    /// for permanent ones.
    pub fault_mode: Option<FaultMode>,
    pub tracker: TrackerSettings,
    pub category_policy: CategoryPolicy,
    pub severity_levels: Vec<f64>,
    pub iou_threshold: f64,
    pub scene: SceneSpec,
    /// Scene pool drawn from by transient injections.
    pub n_scenes: usize,
    /// Reuse the first scene for every injection.
    pub fixed_image: bool,
    pub n_frames: usize,
    /// Worker threads; results do not depend on it.
    pub workers: usize,
    /// Write persistent masks of corrupted sequences as PGM files.
    pub write_masks: bool,
    pub ingest: Option<IngestPaths>,
    pub simulation: SimulationSettings,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            mode: CampaignMode::Transient,
            seed: None,
            n_injections: 1000,
            target: FaultTarget::Neuron,
            bit_policy: BitPolicy::All32,
            fault_mode: None,
            tracker: TrackerSettings::default(),
            category_policy: CategoryPolicy::Strict,
            severity_levels: vec![0.0, 0.01, 0.05, 0.1, 0.15],
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            scene: SceneSpec::default(),
            n_scenes: 200,
            fixed_image: false,
            n_frames: 60,
            workers: 1,
            write_masks: false,
            ingest: None,
            simulation: SimulationSettings::default(),
        }
    }
}

impl CampaignConfig {
    /// Defaults for a mode: permanent campaigns sample stuck-at-1 faults in
    /// exponent bits.
    pub fn for_mode(mode: CampaignMode) -> Self {
        let mut cfg = CampaignConfig {
            mode,
            ..Default::default()
        };
        if mode == CampaignMode::Permanent {
            cfg.bit_policy = BitPolicy::ExponentOnly;
            cfg.n_injections = 100;
        }
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required".into()))
    }

    pub fn fault_mode(&self) -> FaultMode {
        self.fault_mode.unwrap_or(match self.mode {
            CampaignMode::Permanent => FaultMode::StuckAt1,
            _ => FaultMode::TransientFlip,
        })
    }

    pub fn synthetic_set(&self) -> Result<SyntheticSetConfig> {
        let s = &self.simulation;
        Ok(SyntheticSetConfig {
            n_objects: s.n_objects,
            p_tp: s.p_tp,
            fp_rate: s.fp_rate,
            conf_range: s.conf_range,
            seed: self.seed()?,
        })
    }

    /// Checks everything a run needs before any work starts.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.seed()?;
        if self.workers == 0 {
            return cfg_err("workers must be at least 1".into());
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return cfg_err(format!("iou_threshold {} outside (0, 1]", self.iou_threshold));
        }
        if let Some(l) = self.severity_levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return cfg_err(format!("severity level {l} outside [0, 1]"));
        }
        match self.mode {
            CampaignMode::Transient | CampaignMode::Permanent => {
                if self.n_injections == 0 {
                    return cfg_err("n_injections must be at least 1".into());
                }
                self.scene
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            _ => {}
        }
        match self.mode {
            CampaignMode::Transient => {
                if self.n_scenes == 0 {
                    return cfg_err("n_scenes must be at least 1".into());
                }
            }
            CampaignMode::Permanent => {
                for t in [self.tracker.fp(), self.tracker.fn_()] {
                    t.validate().map_err(|e| Error::Config(e.to_string()))?;
                }
                if self.n_frames < self.tracker.n {
                    return cfg_err(format!(
                        "sequence of {} frames is shorter than the tracker window {}",
                        self.n_frames, self.tracker.n
                    ));
                }
            }
            CampaignMode::Ingest => {
                if self.ingest.is_none() {
                    return cfg_err("ingest mode needs 'ingest': {\"orig\", \"corr\"}".into());
                }
            }
            CampaignMode::SimulatePr => {
                self.synthetic_set()?
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }
}

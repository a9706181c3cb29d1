use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{CampaignConfig, CampaignMode};
use super::records::{pair_records, read_records_file, DetectionRecord};
use crate::ap_eval::{
    average_precision, generate_synthetic_set, mean_average_precision, perturb_set, Perturbation,
};
use crate::error::{Error, Result};
use crate::fault_model::{rescale_rate, sample_fault_with, FaultDescriptor, FaultTarget};
use crate::geometry::{mask_diff, rasterize, BBox, Detection, OccupancyMask};
use crate::ivmod_metrics::{
    baseline_occupancy, bit_averaged, evaluate_pair, rates, summarize_severity, ImageEval,
    ImagePair, SdcReport, SeveritySummary, Verdict,
};
use crate::matching::{fp_type_breakdown, FpBreakdown};
use crate::persistence::{
    occupancy_series, sdc_at_severity, series_mean, track, OccupancyReference,
};
use crate::toy_detector::{generate_scene, generate_sequence, infer, DetectorModel, InferenceTrace, Scene};

/// Independent random stream of one work item.
fn item_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Streams reserved for campaign-level draws; injections use their index.
const SCENE_STREAM: u64 = u64::MAX;
const SEQUENCE_STREAM: u64 = u64::MAX - 1;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSummary {
    pub n: usize,
    pub sdc_rate: f64,
    pub due_rate: f64,
    pub benign_rate: f64,
}

impl RateSummary {
    fn of(evals: &[ImageEval]) -> Result<Self> {
        let (sdc_rate, due_rate) = rates(evals)?;
        let benign = evals
            .iter()
            .filter(|e| crate::ivmod_metrics::classify_image(e) == Verdict::Benign)
            .count();
        Ok(RateSummary {
            n: evals.len(),
            sdc_rate,
            due_rate,
            benign_rate: benign as f64 / evals.len() as f64,
        })
    }
}

/// Per-bit aggregate of a transient campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitRow {
    pub bit: u8,
    pub n_injections: usize,
    pub n_sdc: usize,
    pub n_due: usize,
    pub sdc_rate: f64,
    pub due_rate: f64,
    pub mean_delta_fp: Option<f64>,
    pub mean_delta_fn_n: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApPair {
    pub ap50: f64,
    pub map: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApComparison {
    pub orig: ApPair,
    pub corr: ApPair,
}

fn ap_pair(preds: &[Vec<Detection>], gts: &[Vec<Detection>]) -> Result<ApPair> {
    Ok(ApPair {
        ap50: average_precision(preds, gts, 0.5)?.mean,
        map: mean_average_precision(preds, gts)?,
    })
}

/// Outcome of one transient injection.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionResult {
    pub injection_id: usize,
    pub fault: FaultDescriptor,
    pub scene_index: usize,
    pub image_id: String,
    pub eval: ImageEval,
    pub report: SdcReport,
    pub fp_breakdown: FpBreakdown,
    /// Faulty detections equal the fault-free ones bit for bit.
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientSummary {
    pub mode: &'static str,
    pub seed: u64,
    pub target: FaultTarget,
    pub bit_policy: crate::fault_model::BitPolicy,
    pub fault_mode: crate::fault_model::FaultMode,
    pub rates: RateSummary,
    pub severity: SeveritySummary,
    pub fp_breakdown: FpBreakdown,
    pub n_identical: usize,
    pub per_bit: Vec<BitRow>,
    pub ap: ApComparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientReport {
    pub summary: TransientSummary,
    pub injections: Vec<InjectionResult>,
}

impl TransientReport {
    pub fn bit_row(&self, bit: u8) -> Option<&BitRow> {
        self.summary.per_bit.iter().find(|r| r.bit == bit)
    }
}

fn scene_id(i: usize) -> String {
    format!("scene-{i:05}")
}

/// Transient campaign on the analytic detector.
pub fn run_transient(cfg: &CampaignConfig) -> Result<TransientReport> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let model = DetectorModel::analytic();
    let catalog = model.shape_catalog(cfg.scene.width, cfg.scene.height);
    let n_scenes = if cfg.fixed_image { 1 } else { cfg.n_scenes };
    let mut scene_rng = item_rng(seed, SCENE_STREAM);
    let scene_seeds: Vec<u64> = (0..n_scenes).map(|_| scene_rng.gen()).collect();
    let mode = cfg.fault_mode();
    let policy = &cfg.category_policy;

    let pool = pool(cfg.workers)?;
    let (scenes, clean, injections) = pool.install(|| -> Result<_> {
        let scenes: Vec<Scene> = scene_seeds
            .par_iter()
            .map(|&s| generate_scene(&cfg.scene, s))
            .collect::<Result<_>>()?;
        let clean: Vec<InferenceTrace> = scenes
            .par_iter()
            .map(|s| infer(&model, s, None))
            .collect::<Result<_>>()?;
        let injections: Vec<(InjectionResult, Vec<Detection>)> = (0..cfg.n_injections)
            .into_par_iter()
            .map(|i| {
                let mut rng = item_rng(seed, i as u64);
                let fault = sample_fault_with(&mut rng, &catalog, cfg.target, cfg.bit_policy, mode)?;
                let si = rng.gen_range(0..n_scenes);
                let scene = &scenes[si];
                let base = &clean[si];
                let trace = infer(&model, scene, Some(&fault))?;
                let gts = scene.ground_truth();
                let image_id = scene_id(si);
                let (eval, report) = evaluate_pair(
                    &ImagePair {
                        image_id: &image_id,
                        width: scene.width,
                        height: scene.height,
                        dets_orig: &base.detections,
                        dets_corr: &trace.detections,
                        gts: &gts,
                        nan_flag: trace.nan_seen,
                        inf_flag: trace.inf_seen,
                    },
                    cfg.iou_threshold,
                    policy,
                )?;
                let fp_breakdown = if report.verdict == Verdict::Sdc {
                    fp_type_breakdown(&trace.detections, &gts, cfg.iou_threshold)
                } else {
                    FpBreakdown::default()
                };
                let identical = trace.same_detections(base);
                Ok((
                    InjectionResult {
                        injection_id: i,
                        fault,
                        scene_index: si,
                        image_id,
                        eval,
                        report,
                        fp_breakdown,
                        identical,
                    },
                    trace.detections,
                ))
            })
            .collect::<Result<_>>()?;
        Ok((scenes, clean, injections))
    })?;

    let gts: Vec<Vec<Detection>> = injections
        .iter()
        .map(|(r, _)| scenes[r.scene_index].ground_truth())
        .collect();
    let orig: Vec<Vec<Detection>> = injections
        .iter()
        .map(|(r, _)| clean[r.scene_index].detections.clone())
        .collect();
    let (results, corr): (Vec<InjectionResult>, Vec<Vec<Detection>>) = injections.into_iter().unzip();
    let ap = ApComparison {
        orig: ap_pair(&orig, &gts)?,
        corr: ap_pair(&corr, &gts)?,
    };
    let summary = summarize_transient(cfg, seed, &results, ap)?;
    Ok(TransientReport {
        summary,
        injections: results,
    })
}

fn summarize_transient(
    cfg: &CampaignConfig,
    seed: u64,
    results: &[InjectionResult],
    ap: ApComparison,
) -> Result<TransientSummary> {
    let evals: Vec<ImageEval> = results.iter().map(|r| r.eval.clone()).collect();
    let pairs: Vec<(FaultDescriptor, SdcReport)> = results
        .iter()
        .map(|r| (r.fault.clone(), r.report.clone()))
        .collect();
    let averaged = bit_averaged(&pairs);
    let mut per_bit: BTreeMap<u8, BitRow> = BTreeMap::new();
    for r in results {
        let bit = r.fault.bit.index();
        let row = per_bit.entry(bit).or_insert(BitRow {
            bit,
            n_injections: 0,
            n_sdc: 0,
            n_due: 0,
            sdc_rate: 0.0,
            due_rate: 0.0,
            mean_delta_fp: None,
            mean_delta_fn_n: None,
        });
        row.n_injections += 1;
        match r.report.verdict {
            Verdict::Sdc => row.n_sdc += 1,
            Verdict::Due => row.n_due += 1,
            Verdict::Benign => {}
        }
    }
    for row in per_bit.values_mut() {
        row.sdc_rate = row.n_sdc as f64 / row.n_injections as f64;
        row.due_rate = row.n_due as f64 / row.n_injections as f64;
        if let Some(a) = averaged.get(&row.bit) {
            row.mean_delta_fp = Some(a.mean_delta_fp);
            row.mean_delta_fn_n = a.mean_delta_fn_n;
        }
    }
    let mut fp_breakdown = FpBreakdown::default();
    for r in results {
        fp_breakdown += r.fp_breakdown;
    }
    Ok(TransientSummary {
        mode: CampaignMode::Transient.as_str(),
        seed,
        target: cfg.target,
        bit_policy: cfg.bit_policy,
        fault_mode: cfg.fault_mode(),
        rates: RateSummary::of(&evals)?,
        severity: summarize_severity(results.iter().map(|r| &r.report)),
        fp_breakdown,
        n_identical: results.iter().filter(|r| r.identical).count(),
        per_bit: per_bit.into_values().collect(),
        ap,
    })
}

/// Persistence of one permanent fault over the sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermanentResult {
    pub injection_id: usize,
    pub fault: FaultDescriptor,
    /// NaN or Inf appeared in any frame.
    pub due: bool,
    /// Sequence-average persistent false-positive occupancy.
    pub fp_occupancy: Option<f64>,
    /// Sequence-average persistent vacancy relative to the fault-free
    /// detections.
    pub fn_vacancy: Option<f64>,
    pub fp_at_level: Vec<(f64, bool)>,
    pub fn_at_level: Vec<(f64, bool)>,
    #[serde(skip)]
    pub fp_series: Vec<Option<f64>>,
    #[serde(skip)]
    pub fn_series: Vec<Option<f64>>,
    #[serde(skip)]
    pub fp_masks: Vec<OccupancyMask>,
    #[serde(skip)]
    pub fn_masks: Vec<OccupancyMask>,
}

impl PermanentResult {
    /// Silent persistent corruption at a level: the blob persists and no
    /// NaN/Inf gave it away.
    pub fn sdc_fp(&self, level_index: usize) -> bool {
        !self.due && self.fp_at_level[level_index].1
    }

    pub fn sdc_fn(&self, level_index: usize) -> bool {
        !self.due && self.fn_at_level[level_index].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: f64,
    pub fp_rate: f64,
    pub fp_rate_rescaled: f64,
    pub fn_rate: f64,
    pub fn_rate_rescaled: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermanentBitRow {
    pub bit: u8,
    pub n_injections: usize,
    pub n_due: usize,
    pub mean_fp_occupancy: Option<f64>,
    pub mean_fn_vacancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermanentSummary {
    pub mode: &'static str,
    pub seed: u64,
    pub target: FaultTarget,
    pub bit_policy: crate::fault_model::BitPolicy,
    pub fault_mode: crate::fault_model::FaultMode,
    pub n_injections: usize,
    pub n_frames: usize,
    pub due_rate: f64,
    /// Fault-free imperfection against ground truth, averaged over frames.
    pub baseline_fp_occupancy: f64,
    pub baseline_fn_vacancy: Option<f64>,
    pub levels: Vec<LevelRow>,
    pub per_bit: Vec<PermanentBitRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermanentReport {
    pub summary: PermanentSummary,
    pub faults: Vec<PermanentResult>,
}

fn boxes(dets: &[Detection]) -> Vec<BBox> {
    dets.iter().map(|d| d.bbox).collect()
}

fn mean_opt(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Permanent-fault campaign over a synthetic frame sequence.
pub fn run_permanent(cfg: &CampaignConfig) -> Result<PermanentReport> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let model = DetectorModel::analytic();
    let (w, h) = (cfg.scene.width, cfg.scene.height);
    let catalog = model.shape_catalog(w, h);
    let seq_seed = item_rng(seed, SEQUENCE_STREAM).gen();
    let frames = generate_sequence(&cfg.scene, cfg.n_frames, seq_seed)?;
    let mode = cfg.fault_mode();
    let levels = &cfg.severity_levels;
    let fp_tracker = cfg.tracker.fp();
    let fn_tracker = cfg.tracker.fn_();

    let pool = pool(cfg.workers)?;
    let (clean, faults) = pool.install(|| -> Result<_> {
        let clean: Vec<InferenceTrace> = frames
            .par_iter()
            .map(|f| infer(&model, f, None))
            .collect::<Result<_>>()?;
        let orig_masks: Vec<OccupancyMask> = clean
            .iter()
            .map(|t| rasterize(&boxes(&t.detections), w, h))
            .collect();
        let faults: Vec<PermanentResult> = (0..cfg.n_injections)
            .into_par_iter()
            .map(|i| {
                let mut rng = item_rng(seed, i as u64);
                let fault = sample_fault_with(&mut rng, &catalog, cfg.target, cfg.bit_policy, mode)?;
                let faulty = model.with_fault(&fault)?;
                let neuron = (fault.target == FaultTarget::Neuron).then_some(&fault);
                let mut due = false;
                let mut fp_blobs = Vec::with_capacity(frames.len());
                let mut fn_blobs = Vec::with_capacity(frames.len());
                for (frame, orig) in frames.iter().zip(&orig_masks) {
                    let t = infer(&faulty, frame, neuron)?;
                    due |= t.nan_seen || t.inf_seen;
                    let corr = rasterize(&boxes(&t.detections), w, h);
                    fp_blobs.push(mask_diff(&corr, orig)?);
                    fn_blobs.push(mask_diff(orig, &corr)?);
                }
                let fp_v = track(&fp_blobs, &fp_tracker)?;
                let fn_v = track(&fn_blobs, &fn_tracker)?;
                let fp_series = occupancy_series(&fp_v, &OccupancyReference::ImageArea(w * h))?;
                let fn_series = occupancy_series(
                    &fn_v,
                    &OccupancyReference::PerFrame(orig_masks.iter().map(|m| m.count()).collect()),
                )?;
                Ok(PermanentResult {
                    injection_id: i,
                    fault,
                    due,
                    fp_occupancy: series_mean(&fp_series),
                    fn_vacancy: series_mean(&fn_series),
                    fp_at_level: sdc_at_severity(&fp_series, levels),
                    fn_at_level: sdc_at_severity(&fn_series, levels),
                    fp_series,
                    fn_series,
                    fp_masks: if cfg.write_masks { fp_v.persistent } else { Vec::new() },
                    fn_masks: if cfg.write_masks { fn_v.persistent } else { Vec::new() },
                })
            })
            .collect::<Result<_>>()?;
        Ok((clean, faults))
    })?;

    let mut base_fp = Vec::new();
    let mut base_fn = Vec::new();
    for (frame, t) in frames.iter().zip(&clean) {
        let (a, b) = baseline_occupancy(&t.detections, &frame.ground_truth(), w, h)?;
        base_fp.push(a);
        base_fn.extend(b);
    }
    let n = faults.len() as f64;
    let level_rows = levels
        .iter()
        .enumerate()
        .map(|(li, &level)| {
            let fp_rate = faults.iter().filter(|f| f.sdc_fp(li)).count() as f64 / n;
            let fn_rate = faults.iter().filter(|f| f.sdc_fn(li)).count() as f64 / n;
            LevelRow {
                level,
                fp_rate,
                fp_rate_rescaled: rescale_rate(fp_rate),
                fn_rate,
                fn_rate_rescaled: rescale_rate(fn_rate),
            }
        })
        .collect();
    let mut by_bit: BTreeMap<u8, Vec<&PermanentResult>> = BTreeMap::new();
    for f in &faults {
        by_bit.entry(f.fault.bit.index()).or_default().push(f);
    }
    let per_bit = by_bit
        .into_iter()
        .map(|(bit, fs)| PermanentBitRow {
            bit,
            n_injections: fs.len(),
            n_due: fs.iter().filter(|f| f.due).count(),
            mean_fp_occupancy: mean_opt(fs.iter().filter(|f| !f.due).filter_map(|f| f.fp_occupancy)),
            mean_fn_vacancy: mean_opt(fs.iter().filter(|f| !f.due).filter_map(|f| f.fn_vacancy)),
        })
        .collect();
    let summary = PermanentSummary {
        mode: CampaignMode::Permanent.as_str(),
        seed,
        target: cfg.target,
        bit_policy: cfg.bit_policy,
        fault_mode: mode,
        n_injections: faults.len(),
        n_frames: frames.len(),
        due_rate: faults.iter().filter(|f| f.due).count() as f64 / n,
        baseline_fp_occupancy: mean_opt(base_fp.into_iter()).unwrap_or(0.0),
        baseline_fn_vacancy: mean_opt(base_fn.into_iter()),
        levels: level_rows,
        per_bit,
    };
    Ok(PermanentReport { summary, faults })
}

/// One scored image of an ingest run.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestRow {
    pub eval: ImageEval,
    pub report: SdcReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub mode: &'static str,
    pub rates: RateSummary,
    pub severity: SeveritySummary,
    pub fp_breakdown: FpBreakdown,
    pub ap: ApComparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub summary: IngestSummary,
    pub images: Vec<IngestRow>,
}

/// Scores externally produced fault-free/faulty record pairs.
pub fn ingest_and_score(
    orig: &[DetectionRecord],
    corr: &[DetectionRecord],
    cfg: &CampaignConfig,
) -> Result<IngestReport> {
    if orig.is_empty() {
        return Err(Error::Data("no records to score".into()));
    }
    let pairs = pair_records(orig, corr)?;
    let mut images = Vec::with_capacity(pairs.len());
    let mut fp_breakdown = FpBreakdown::default();
    let (mut p_orig, mut p_corr, mut gts) = (Vec::new(), Vec::new(), Vec::new());
    for (o, c) in pairs {
        let o = o.ingest();
        let c = c.ingest();
        let (eval, report) = evaluate_pair(
            &ImagePair {
                image_id: &o.image_id,
                width: o.width,
                height: o.height,
                dets_orig: &o.detections,
                dets_corr: &c.detections,
                gts: &o.ground_truth,
                nan_flag: c.nan,
                inf_flag: c.inf,
            },
            cfg.iou_threshold,
            &cfg.category_policy,
        )?;
        if report.verdict == Verdict::Sdc {
            fp_breakdown += fp_type_breakdown(&c.detections, &o.ground_truth, cfg.iou_threshold);
        }
        images.push(IngestRow { eval, report });
        p_orig.push(o.detections);
        p_corr.push(c.detections);
        gts.push(o.ground_truth);
    }
    let evals: Vec<ImageEval> = images.iter().map(|r| r.eval.clone()).collect();
    Ok(IngestReport {
        summary: IngestSummary {
            mode: CampaignMode::Ingest.as_str(),
            rates: RateSummary::of(&evals)?,
            severity: summarize_severity(images.iter().map(|r| &r.report)),
            fp_breakdown,
            ap: ApComparison {
                orig: ap_pair(&p_orig, &gts)?,
                corr: ap_pair(&p_corr, &gts)?,
            },
        },
        images,
    })
}

/// Ingest mode driven by the paths in the config.
pub fn run_ingest(cfg: &CampaignConfig) -> Result<IngestReport> {
    cfg.validate()?;
    let paths = cfg.ingest.as_ref().expect("validated");
    let orig = read_records_file(&paths.orig)?;
    let corr = read_records_file(&paths.corr)?;
    ingest_and_score(&orig, &corr, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedCurve {
    pub name: String,
    pub perturbation: Option<Perturbation>,
    pub ap50: f64,
    pub delta_ap50: f64,
    pub n_tp: usize,
    pub n_fp: usize,
    #[serde(skip)]
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub mode: &'static str,
    pub seed: u64,
    pub curves: Vec<SimulatedCurve>,
}

fn perturbation_name(p: &Perturbation) -> String {
    match p {
        Perturbation::AddFps { count, conf_range } => {
            format!("add_{count}_fp_conf_{}_{}", conf_range.0, conf_range.1)
        }
        Perturbation::RemoveTps { count } => format!("remove_{count}_tp"),
    }
}

/// Synthetic precision/recall experiment: a baseline set and each
/// configured perturbation of it.
pub fn run_simulation(cfg: &CampaignConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let base = generate_synthetic_set(&cfg.synthetic_set()?)?;
    let base_ap = base.ap();
    let curve = |name: String, p: Option<Perturbation>, s: &crate::ap_eval::SyntheticSet| SimulatedCurve {
        name,
        perturbation: p,
        ap50: s.ap(),
        delta_ap50: s.ap() - base_ap,
        n_tp: s.tp_count(),
        n_fp: s.fp_count(),
        points: s.pr_points(),
    };
    let mut curves = vec![curve("baseline".into(), None, &base)];
    for (k, p) in cfg.simulation.perturbations.iter().enumerate() {
        let s = perturb_set(&base, *p, item_rng(seed, k as u64).gen())
            .map_err(|e| Error::Config(e.to_string()))?;
        curves.push(curve(perturbation_name(p), Some(*p), &s));
    }
    Ok(SimulationReport {
        mode: CampaignMode::SimulatePr.as_str(),
        seed,
        curves,
    })
}

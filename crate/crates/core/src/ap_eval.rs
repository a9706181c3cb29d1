//! Average precision over confidence-ranked detections, and the synthetic
//! precision/recall experiment showing how AP reacts to where extra false
//! positives land in the ranking.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection};

/// Recall sampling points used for interpolation (0.00, 0.01, ..., 1.00).
pub const RECALL_POINTS: usize = 101;

/// IoU thresholds averaged by [`mean_average_precision`]: 0.50..=0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Precision/recall sweep of one category, in confidence-descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub category: u32,
    /// `(recall, precision)` after each prediction.
    pub points: Vec<(f64, f64)>,
}

/// A ranked prediction reduced to what AP needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub confidence: f64,
    pub is_tp: bool,
}

impl ScoredOutcome {
    pub fn tp(confidence: f64) -> Self {
        ScoredOutcome {
            confidence,
            is_tp: true,
        }
    }

    pub fn fp(confidence: f64) -> Self {
        ScoredOutcome {
            confidence,
            is_tp: false,
        }
    }
}

fn ranked(outcomes: &[ScoredOutcome]) -> Vec<ScoredOutcome> {
    let mut v = outcomes.to_vec();
    // Stable: equal confidences keep input order.
    v.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    v
}

/// Cumulative `(recall, precision)` along the confidence-descending sweep.
pub fn pr_points(outcomes: &[ScoredOutcome], n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    ranked(outcomes)
        .iter()
        .enumerate()
        .map(|(k, o)| {
            if o.is_tp {
                tp += 1;
            }
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Interpolated AP of a ranked list against `n_gt` ground-truth objects.
///
/// The precision envelope (running maximum from the right) is sampled at
/// [`RECALL_POINTS`] evenly spaced recalls; recall levels never reached
/// contribute zero.
pub fn ap_from_outcomes(outcomes: &[ScoredOutcome], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let pts = pr_points(outcomes, n_gt);
    let mut envelope: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0usize;
    for step in 0..RECALL_POINTS {
        let r = step as f64 / (RECALL_POINTS - 1) as f64;
        while k < pts.len() && pts[k].0 < r - 1e-12 {
            k += 1;
        }
        if k < pts.len() {
            sum += envelope[k];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Greedy confidence-ordered matching of one image and one category.
///
/// Each prediction takes the unmatched ground truth of highest IoU at or
/// above the threshold; equal IoUs go to the lower index.
fn match_image_category(
    preds: &[&Detection],
    gts: &[&Detection],
    iou_threshold: f64,
) -> Vec<ScoredOutcome> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let p = preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let o = iou(&p.bbox, &g.bbox);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            ScoredOutcome {
                confidence: p.confidence,
                is_tp: best.is_some(),
            }
        })
        .collect()
}

/// AP per category and its mean at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub iou_threshold: f64,
    pub per_category: BTreeMap<u32, f64>,
    /// Mean over categories present in the ground truth; 0 when there are
    /// none.
    pub mean: f64,
}

/// Ranked outcomes per ground-truth category over a whole image set.
fn outcomes_by_category(
    preds_by_image: &[Vec<Detection>],
    gts_by_image: &[Vec<Detection>],
    iou_threshold: f64,
) -> Result<BTreeMap<u32, (Vec<ScoredOutcome>, usize)>> {
    if preds_by_image.len() != gts_by_image.len() {
        return Err(Error::arg(format!(
            "{} prediction images vs {} ground-truth images",
            preds_by_image.len(),
            gts_by_image.len()
        )));
    }
    let categories: BTreeSet<u32> = gts_by_image.iter().flatten().map(|g| g.category).collect();
    let mut out: BTreeMap<u32, (Vec<ScoredOutcome>, usize)> =
        categories.iter().map(|&c| (c, (Vec::new(), 0))).collect();
    for (preds, gts) in preds_by_image.iter().zip(gts_by_image) {
        for (&cat, (outcomes, n_gt)) in out.iter_mut() {
            let p: Vec<&Detection> = preds.iter().filter(|d| d.category == cat).collect();
            let g: Vec<&Detection> = gts.iter().filter(|d| d.category == cat).collect();
            *n_gt += g.len();
            outcomes.extend(match_image_category(&p, &g, iou_threshold));
        }
    }
    Ok(out)
}

/// Per-category AP and category mean at one IoU threshold.
pub fn average_precision(
    preds_by_image: &[Vec<Detection>],
    gts_by_image: &[Vec<Detection>],
    iou_threshold: f64,
) -> Result<ApResult> {
    let per_category: BTreeMap<u32, f64> =
        outcomes_by_category(preds_by_image, gts_by_image, iou_threshold)?
            .into_iter()
            .map(|(c, (o, n))| (c, ap_from_outcomes(&o, n)))
            .collect();
    let mean = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().sum::<f64>() / per_category.len() as f64
    };
    Ok(ApResult {
        iou_threshold,
        per_category,
        mean,
    })
}

/// PR curves per ground-truth category.
pub fn pr_curves(
    preds_by_image: &[Vec<Detection>],
    gts_by_image: &[Vec<Detection>],
    iou_threshold: f64,
) -> Result<Vec<PrCurve>> {
    Ok(outcomes_by_category(preds_by_image, gts_by_image, iou_threshold)?
        .into_iter()
        .map(|(category, (o, n))| PrCurve {
            category,
            points: pr_points(&o, n),
        })
        .collect())
}

/// Mean of [`average_precision`] over 0.50:0.05:0.95.
pub fn mean_average_precision(
    preds_by_image: &[Vec<Detection>],
    gts_by_image: &[Vec<Detection>],
) -> Result<f64> {
    let th = coco_iou_thresholds();
    let mut sum = 0.0;
    for &t in &th {
        sum += average_precision(preds_by_image, gts_by_image, t)?.mean;
    }
    Ok(sum / th.len() as f64)
}

/// Parameters of the geometry-free synthetic detection set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSetConfig {
    pub n_objects: usize,
    pub p_tp: f64,
    /// Expected false positives per true detection.
    pub fp_rate: f64,
    pub conf_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSetConfig {
    fn default() -> Self {
        SyntheticSetConfig {
            n_objects: 100,
            p_tp: 0.7,
            fp_rate: 0.3,
            conf_range: (0.7, 1.0),
            seed: 0,
        }
    }
}

fn check_range(range: (f64, f64)) -> Result<()> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::arg(format!("bad confidence range [{lo}, {hi}]")));
    }
    Ok(())
}

impl SyntheticSetConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_tp", self.p_tp), ("fp_rate", self.fp_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::arg(format!("{name} = {p} outside [0, 1]")));
            }
        }
        check_range(self.conf_range)
    }
}

/// Outcome-only detection set: ranked predictions plus the ground-truth
/// count they are scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub predictions: Vec<ScoredOutcome>,
    pub n_gt: usize,
}

impl SyntheticSet {
    pub fn ap(&self) -> f64 {
        ap_from_outcomes(&self.predictions, self.n_gt)
    }

    pub fn tp_count(&self) -> usize {
        self.predictions.iter().filter(|p| p.is_tp).count()
    }

    pub fn fp_count(&self) -> usize {
        self.predictions.len() - self.tp_count()
    }

    pub fn pr_points(&self) -> Vec<(f64, f64)> {
        pr_points(&self.predictions, self.n_gt)
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws the baseline set: each object is detected with probability `p_tp`,
/// and each detection spawns a false positive with probability `fp_rate`.
pub fn generate_synthetic_set(cfg: &SyntheticSetConfig) -> Result<SyntheticSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut predictions = Vec::new();
    for _ in 0..cfg.n_objects {
        if rng.gen_bool(cfg.p_tp) {
            predictions.push(ScoredOutcome::tp(uniform(&mut rng, cfg.conf_range)));
            if rng.gen_bool(cfg.fp_rate) {
                predictions.push(ScoredOutcome::fp(uniform(&mut rng, cfg.conf_range)));
            }
        }
    }
    Ok(SyntheticSet {
        predictions,
        n_gt: cfg.n_objects,
    })
}

/// Fault-like modification of a synthetic set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    AddFps { count: usize, conf_range: (f64, f64) },
    RemoveTps { count: usize },
}

/// Applies a perturbation; removed TPs become misses.
pub fn perturb_set(set: &SyntheticSet, perturbation: Perturbation, seed: u64) -> Result<SyntheticSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    match perturbation {
        Perturbation::AddFps { count, conf_range } => {
            check_range(conf_range)?;
            for _ in 0..count {
                out.predictions.push(ScoredOutcome::fp(uniform(&mut rng, conf_range)));
            }
        }
        Perturbation::RemoveTps { count } => {
            let tps: Vec<usize> = (0..set.predictions.len())
                .filter(|&i| set.predictions[i].is_tp)
                .collect();
            if count > tps.len() {
                return Err(Error::arg(format!(
                    "cannot remove {count} true positives from a set with {}",
                    tps.len()
                )));
            }
            let drop: BTreeSet<usize> = sample(&mut rng, tps.len(), count)
                .into_iter()
                .map(|k| tps[k])
                .collect();
            out.predictions = set
                .predictions
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, p)| *p)
                .collect();
        }
    }
    Ok(out)
}

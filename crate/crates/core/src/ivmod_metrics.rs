//! Image-wise corruption verdicts, their rates, and per-event severity
//! features (count deltas, confidence and size shifts, blob occupancy).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault_model::FaultDescriptor;
use crate::geometry::{mask_diff, rasterize, BBox, Detection};
use crate::matching::{assign, CategoryPolicy, Counts};

/// Counts of one image before and after a fault, plus the faulty run's
/// NaN/Inf symptoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image_id: String,
    pub counts_orig: Counts,
    pub counts_corr: Counts,
    pub inf_flag: bool,
    pub nan_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Sdc,
    Due,
    Benign,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Sdc => "sdc",
            Verdict::Due => "due",
            Verdict::Benign => "benign",
        }
    }
}

/// Detectable if any NaN/Inf showed up; silent if the FP or FN count moved.
pub fn classify_image(e: &ImageEval) -> Verdict {
    if e.inf_flag || e.nan_flag {
        Verdict::Due
    } else if e.counts_orig.fp != e.counts_corr.fp || e.counts_orig.fn_ != e.counts_corr.fn_ {
        Verdict::Sdc
    } else {
        Verdict::Benign
    }
}

/// Fractions of images with a silent and with a detectable corruption.
pub fn rates(evals: &[ImageEval]) -> Result<(f64, f64)> {
    if evals.is_empty() {
        return Err(Error::arg("rates need at least one image"));
    }
    let (mut sdc, mut due) = (0usize, 0usize);
    for e in evals {
        match classify_image(e) {
            Verdict::Sdc => sdc += 1,
            Verdict::Due => due += 1,
            Verdict::Benign => {}
        }
    }
    let n = evals.len() as f64;
    Ok((sdc as f64 / n, due as f64 / n))
}

/// Severity features of one faulty inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdcReport {
    pub verdict: Verdict,
    pub delta_fp: i64,
    /// Fraction of original true positives lost; `None` without any.
    pub delta_fn_n: Option<f64>,
    pub avg_conf_orig: Option<f64>,
    pub avg_conf_corr: Option<f64>,
    /// Mean box area in px².
    pub avg_size_orig: Option<f64>,
    pub avg_size_corr: Option<f64>,
    pub a_fp_occ: f64,
    /// `None` when the original detections cover no pixel.
    pub a_fn_vac: Option<f64>,
    /// The fault removed false objects or recovered missed ones.
    pub negative_delta: bool,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn boxes(dets: &[Detection]) -> Vec<BBox> {
    dets.iter().map(|d| d.bbox).collect()
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::arg(format!("zero-area image {width}x{height}")));
    }
    Ok(())
}

/// Fault-induced occupancy `(a_fp_occ, a_fn_vac)` of one frame.
pub fn blob_occupancy(
    dets_orig: &[Detection],
    dets_corr: &[Detection],
    width: usize,
    height: usize,
) -> Result<(f64, Option<f64>)> {
    check_dims(width, height)?;
    let orig = rasterize(&boxes(dets_orig), width, height);
    let corr = rasterize(&boxes(dets_corr), width, height);
    let fp_blob = mask_diff(&corr, &orig)?;
    let fn_blob = mask_diff(&orig, &corr)?;
    let a_fp = fp_blob.count() as f64 / orig.area() as f64;
    let a_fn = (orig.count() > 0).then(|| fn_blob.count() as f64 / orig.count() as f64);
    Ok((a_fp, a_fn))
}

/// Severity features of a faulty inference relative to the fault-free one.
///
/// Box sizes and confidences are averaged over every detection (true and
/// false positives) of each run.
pub fn severity(
    e: &ImageEval,
    dets_orig: &[Detection],
    dets_corr: &[Detection],
    width: usize,
    height: usize,
) -> Result<SdcReport> {
    let (a_fp_occ, a_fn_vac) = blob_occupancy(dets_orig, dets_corr, width, height)?;
    let delta_fp = e.counts_corr.fp as i64 - e.counts_orig.fp as i64;
    let tp_orig = e.counts_orig.tp;
    let delta_fn_n =
        (tp_orig > 0).then(|| (tp_orig as f64 - e.counts_corr.tp as f64) / tp_orig as f64);
    Ok(SdcReport {
        verdict: classify_image(e),
        delta_fp,
        delta_fn_n,
        avg_conf_orig: mean(dets_orig.iter().map(|d| d.confidence)),
        avg_conf_corr: mean(dets_corr.iter().map(|d| d.confidence)),
        avg_size_orig: mean(dets_orig.iter().map(|d| d.bbox.area())),
        avg_size_corr: mean(dets_corr.iter().map(|d| d.bbox.area())),
        a_fp_occ,
        a_fn_vac,
        negative_delta: delta_fp < 0 || delta_fn_n.is_some_and(|v| v < 0.0),
    })
}

/// Inputs of one image pair as seen by the scorer.
#[derive(Debug, Clone, Copy)]
pub struct ImagePair<'a> {
    pub image_id: &'a str,
    pub width: usize,
    pub height: usize,
    pub dets_orig: &'a [Detection],
    pub dets_corr: &'a [Detection],
    pub gts: &'a [Detection],
    pub nan_flag: bool,
    pub inf_flag: bool,
}

/// Matches both runs against ground truth, then classifies and scores.
pub fn evaluate_pair(
    pair: &ImagePair<'_>,
    iou_threshold: f64,
    policy: &CategoryPolicy,
) -> Result<(ImageEval, SdcReport)> {
    let orig = assign(pair.dets_orig, pair.gts, iou_threshold, policy);
    let corr = assign(pair.dets_corr, pair.gts, iou_threshold, policy);
    let e = ImageEval {
        image_id: pair.image_id.to_string(),
        counts_orig: orig.counts(),
        counts_corr: corr.counts(),
        inf_flag: pair.inf_flag,
        nan_flag: pair.nan_flag,
    };
    let report = severity(&e, pair.dets_orig, pair.dets_corr, pair.width, pair.height)?;
    Ok((e, report))
}

/// Mean `(delta_fp, delta_fn_n)` per bit position over silent corruptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitAverage {
    pub n_sdc: usize,
    pub mean_delta_fp: f64,
    /// Mean over reports where the fraction is defined.
    pub mean_delta_fn_n: Option<f64>,
}

/// Groups silent-corruption reports by bit; bits without any are absent.
pub fn bit_averaged(reports: &[(FaultDescriptor, SdcReport)]) -> BTreeMap<u8, BitAverage> {
    let mut groups: BTreeMap<u8, Vec<&SdcReport>> = BTreeMap::new();
    for (fault, r) in reports.iter().filter(|(_, r)| r.verdict == Verdict::Sdc) {
        groups.entry(fault.bit.index()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(bit, rs)| {
            let avg = BitAverage {
                n_sdc: rs.len(),
                mean_delta_fp: mean(rs.iter().map(|r| r.delta_fp as f64)).unwrap_or(0.0),
                mean_delta_fn_n: mean(rs.iter().filter_map(|r| r.delta_fn_n)),
            };
            (bit, avg)
        })
        .collect()
}

/// Occupancy of the fault-free detections against ground truth, i.e. the
/// model's own imperfection.
pub fn baseline_occupancy(
    dets_orig: &[Detection],
    gts: &[Detection],
    width: usize,
    height: usize,
) -> Result<(f64, Option<f64>)> {
    check_dims(width, height)?;
    let det = rasterize(&boxes(dets_orig), width, height);
    let gt = rasterize(&boxes(gts), width, height);
    let a_fp = mask_diff(&det, &gt)?.count() as f64 / det.area() as f64;
    let a_fn = (det.count() > 0).then(|| mask_diff(&gt, &det).map(|m| m.count() as f64 / det.count() as f64));
    Ok((a_fp, a_fn.transpose()?))
}

/// Table-style averages over silent-corruption reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeveritySummary {
    pub n_sdc: usize,
    pub mean_delta_fp: Option<f64>,
    pub mean_delta_fn_n: Option<f64>,
    pub avg_conf_orig: Option<f64>,
    pub avg_conf_corr: Option<f64>,
    /// Mean box area in units of 10³ px².
    pub avg_size_orig_k: Option<f64>,
    pub avg_size_corr_k: Option<f64>,
    pub a_fp_occ: Option<f64>,
    pub a_fn_vac: Option<f64>,
    pub n_negative: usize,
}

/// Averages severity features over the silent corruptions only.
pub fn summarize_severity<'a>(reports: impl IntoIterator<Item = &'a SdcReport>) -> SeveritySummary {
    let sdc: Vec<&SdcReport> = reports
        .into_iter()
        .filter(|r| r.verdict == Verdict::Sdc)
        .collect();
    SeveritySummary {
        n_sdc: sdc.len(),
        mean_delta_fp: mean(sdc.iter().map(|r| r.delta_fp as f64)),
        mean_delta_fn_n: mean(sdc.iter().filter_map(|r| r.delta_fn_n)),
        avg_conf_orig: mean(sdc.iter().filter_map(|r| r.avg_conf_orig)),
        avg_conf_corr: mean(sdc.iter().filter_map(|r| r.avg_conf_corr)),
        avg_size_orig_k: mean(sdc.iter().filter_map(|r| r.avg_size_orig)).map(|v| v / 1e3),
        avg_size_corr_k: mean(sdc.iter().filter_map(|r| r.avg_size_corr)).map(|v| v / 1e3),
        a_fp_occ: mean(sdc.iter().map(|r| r.a_fp_occ)),
        a_fn_vac: mean(sdc.iter().filter_map(|r| r.a_fn_vac)),
        n_negative: sdc.iter().filter(|r| r.negative_delta).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault_model::{BitPosition, FaultMode, FaultTarget};

    fn counts(tp: usize, fp: usize, fn_: usize) -> Counts {
        Counts { tp, fp, fn_ }
    }

    fn eval(orig: Counts, corr: Counts, inf: bool, nan: bool) -> ImageEval {
        ImageEval {
            image_id: "x".into(),
            counts_orig: orig,
            counts_corr: corr,
            inf_flag: inf,
            nan_flag: nan,
        }
    }

    fn bx(x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection::new(BBox::new(x, y, x + w, y + h), 0, 0.8)
    }

    #[test]
    fn verdicts() {
        let c = counts(3, 0, 0);
        assert_eq!(classify_image(&eval(c, c, false, false)), Verdict::Benign);
        assert_eq!(classify_image(&eval(c, counts(3, 2, 0), false, false)), Verdict::Sdc);
        assert_eq!(classify_image(&eval(c, counts(3, 2, 0), true, false)), Verdict::Due);
        assert_eq!(classify_image(&eval(c, c, false, true)), Verdict::Due);
    }

    #[test]
    fn rate_examples() {
        let c = counts(1, 0, 0);
        let mut v: Vec<ImageEval> = (0..10).map(|_| eval(c, c, false, false)).collect();
        assert_eq!(rates(&v).unwrap(), (0.0, 0.0));
        v[0].counts_corr.fp = 1;
        v[1].counts_corr.fn_ = 1;
        v[2].nan_flag = true;
        assert_eq!(rates(&v).unwrap(), (0.2, 0.1));
        assert!(rates(&[]).is_err());
        let all_nan: Vec<_> = (0..4).map(|_| eval(c, c, false, true)).collect();
        assert_eq!(rates(&all_nan).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn deltas() {
        let e = eval(counts(10, 2, 0), counts(4, 5, 6), false, false);
        let r = severity(&e, &[], &[], 10, 10).unwrap();
        assert_eq!(r.delta_fp, 3);
        assert!((r.delta_fn_n.unwrap() - 0.6).abs() < 1e-12);
        let e = eval(counts(0, 0, 2), counts(0, 0, 2), false, false);
        assert_eq!(severity(&e, &[], &[], 10, 10).unwrap().delta_fn_n, None);
        assert!(severity(&e, &[], &[], 0, 10).is_err());
    }

    #[test]
    fn fp_blob_fraction() {
        let orig = [bx(0.0, 0.0, 10.0, 10.0)];
        let corr = [bx(0.0, 0.0, 10.0, 10.0), bx(50.0, 50.0, 20.0, 20.0)];
        let (a_fp, a_fn) = blob_occupancy(&orig, &corr, 100, 100).unwrap();
        assert!((a_fp - 0.04).abs() < 1e-12);
        assert_eq!(a_fn, Some(0.0));
        let (_, a_fn) = blob_occupancy(&corr, &orig, 100, 100).unwrap();
        assert!((a_fn.unwrap() - 400.0 / 500.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_examples() {
        let gts = [bx(0.0, 0.0, 20.0, 20.0)];
        assert_eq!(baseline_occupancy(&gts, &gts, 100, 100).unwrap(), (0.0, Some(0.0)));
        let dets = [bx(0.0, 0.0, 20.0, 20.0), bx(50.0, 50.0, 10.0, 10.0)];
        assert!((baseline_occupancy(&dets, &gts, 100, 100).unwrap().0 - 0.01).abs() < 1e-12);
        let gts = [bx(0.0, 0.0, 20.0, 25.0)];
        let dets = [bx(0.0, 0.0, 20.0, 20.0)];
        let (_, fn_vac) = baseline_occupancy(&dets, &gts, 100, 100).unwrap();
        assert!((fn_vac.unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(baseline_occupancy(&[], &gts, 100, 100).unwrap().1, None);
    }

    #[test]
    fn bit_grouping() {
        let fault = |bit| FaultDescriptor {
            target: FaultTarget::Neuron,
            layer: 0,
            coords: vec![0, 0, 0],
            bit: BitPosition::new(bit).unwrap(),
            mode: FaultMode::TransientFlip,
        };
        let report = |verdict, d| SdcReport {
            verdict,
            delta_fp: d,
            delta_fn_n: None,
            avg_conf_orig: None,
            avg_conf_corr: None,
            avg_size_orig: None,
            avg_size_corr: None,
            a_fp_occ: 0.0,
            a_fn_vac: None,
            negative_delta: false,
        };
        let rs = vec![
            (fault(30), report(Verdict::Sdc, 10)),
            (fault(30), report(Verdict::Sdc, 20)),
            (fault(30), report(Verdict::Due, 99)),
            (fault(5), report(Verdict::Benign, 0)),
        ];
        let avg = bit_averaged(&rs);
        assert_eq!(avg[&30].mean_delta_fp, 15.0);
        assert_eq!(avg[&30].n_sdc, 2);
        assert!(!avg.contains_key(&5));
    }

    #[test]
    fn summary_uses_sdc_only_and_kilo_pixels() {
        let e_sdc = eval(counts(1, 0, 0), counts(1, 1, 0), false, false);
        let orig = [bx(0.0, 0.0, 10.0, 10.0)];
        let corr = [bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 20.0, 30.0, 30.0)];
        let r1 = severity(&e_sdc, &orig, &corr, 100, 100).unwrap();
        let e_ben = eval(counts(1, 0, 0), counts(1, 0, 0), false, false);
        let r2 = severity(&e_ben, &orig, &orig, 100, 100).unwrap();
        let s = summarize_severity([&r1, &r2]);
        assert_eq!(s.n_sdc, 1);
        assert!((s.avg_size_corr_k.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(s.mean_delta_fp, Some(1.0));
    }
}

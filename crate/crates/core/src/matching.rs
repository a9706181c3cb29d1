//! Confidence-independent matching of predictions to ground truth.
//!
//! A prediction/ground-truth pair is admissible when its IoU reaches the
//! threshold and the categories are compatible under the active
//! [`CategoryPolicy`]. Admissible pairs cost `1 - IoU`; everything else gets
//! a sentinel cost larger than any sum of admissible costs, so the optimum
//! maximises the number of matches first and the summed IoU second.
//! Sentinel pairs are dropped from the result: the prediction counts as a
//! false positive and the ground truth as a false negative.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection};
use crate::hungarian;

/// IoU required for a match unless configured otherwise.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Strict,
    Clusters,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPolicy {
    mode: PolicyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clusters: Option<Vec<Vec<u32>>>,
}

/// How strictly predicted and true categories must agree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub enum CategoryPolicy {
    /// Labels must be equal.
    #[default]
    Strict,
    /// Labels must fall in the same group; unlisted labels form singleton
    /// groups.
    Clusters(Vec<Vec<u32>>),
    /// Labels are ignored.
    None,
}

impl CategoryPolicy {
    pub fn clusters(groups: Vec<Vec<u32>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for g in &groups {
            for &c in g {
                if !seen.insert(c) {
                    return Err(Error::Config(format!(
                        "category {c} appears in more than one cluster"
                    )));
                }
            }
        }
        Ok(CategoryPolicy::Clusters(groups))
    }

    pub fn mode(&self) -> PolicyMode {
        match self {
            CategoryPolicy::Strict => PolicyMode::Strict,
            CategoryPolicy::Clusters(_) => PolicyMode::Clusters,
            CategoryPolicy::None => PolicyMode::None,
        }
    }

    pub fn compatible(&self, a: u32, b: u32) -> bool {
        match self {
            CategoryPolicy::Strict => a == b,
            CategoryPolicy::None => true,
            CategoryPolicy::Clusters(groups) => {
                a == b
                    || groups
                        .iter()
                        .any(|g| g.contains(&a) && g.contains(&b))
            }
        }
    }
}

impl TryFrom<RawPolicy> for CategoryPolicy {
    type Error = Error;

    fn try_from(raw: RawPolicy) -> Result<Self> {
        match (raw.mode, raw.clusters) {
            (PolicyMode::Strict, _) => Ok(CategoryPolicy::Strict),
            (PolicyMode::None, _) => Ok(CategoryPolicy::None),
            (PolicyMode::Clusters, Some(groups)) => CategoryPolicy::clusters(groups),
            (PolicyMode::Clusters, None) => Err(Error::Config(
                "category policy 'clusters' needs a 'clusters' list".into(),
            )),
        }
    }
}

impl From<CategoryPolicy> for RawPolicy {
    fn from(p: CategoryPolicy) -> Self {
        match p {
            CategoryPolicy::Strict => RawPolicy {
                mode: PolicyMode::Strict,
                clusters: None,
            },
            CategoryPolicy::None => RawPolicy {
                mode: PolicyMode::None,
                clusters: None,
            },
            CategoryPolicy::Clusters(g) => RawPolicy {
                mode: PolicyMode::Clusters,
                clusters: Some(g),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Per-image assignment result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Accepted pairs, ordered by prediction index.
    pub pairs: Vec<MatchPair>,
}

impl MatchOutcome {
    /// Sum of `1 - IoU` over accepted pairs.
    pub fn matched_cost(&self) -> f64 {
        self.pairs.iter().map(|p| 1.0 - p.iou).sum()
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// TP/FP/FN counts of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Sentinel cost for inadmissible pairs: exceeds any sum of real costs.
pub fn sentinel_cost(n_preds: usize) -> f64 {
    n_preds as f64 + 1.0
}

/// Full cost matrix (rows = predictions, columns = ground truth).
pub fn build_cost_matrix(
    preds: &[Detection],
    gts: &[Detection],
    iou_threshold: f64,
    policy: &CategoryPolicy,
) -> Vec<Vec<f64>> {
    let sentinel = sentinel_cost(preds.len());
    preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| admissible_cost(p, g, iou_threshold, policy).unwrap_or(sentinel))
                .collect()
        })
        .collect()
}

fn admissible_cost(
    p: &Detection,
    g: &Detection,
    iou_threshold: f64,
    policy: &CategoryPolicy,
) -> Option<f64> {
    if !policy.compatible(p.category, g.category) {
        return None;
    }
    let o = iou(&p.bbox, &g.bbox);
    (o >= iou_threshold && o > 0.0).then_some(1.0 - o)
}

/// Admissible edges between the predictions and ground truths that have at
/// least one. Row/column lists keep ascending original indices.
struct EdgeSet {
    rows: Vec<usize>,
    cols: Vec<usize>,
    cost: BTreeMap<(usize, usize), f64>,
}

#[derive(Debug, Clone)]
struct Solution {
    pairs: BTreeMap<usize, usize>,
    sum: f64,
}

impl Solution {
    fn card(&self) -> usize {
        self.pairs.len()
    }
}

impl EdgeSet {
    fn new(preds: &[Detection], gts: &[Detection], thr: f64, policy: &CategoryPolicy) -> Self {
        let mut cost = BTreeMap::new();
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                if let Some(c) = admissible_cost(p, g, thr, policy) {
                    cost.insert((i, j), c);
                }
            }
        }
        let rows: BTreeSet<usize> = cost.keys().map(|&(i, _)| i).collect();
        let cols: BTreeSet<usize> = cost.keys().map(|&(_, j)| j).collect();
        EdgeSet {
            rows: rows.into_iter().collect(),
            cols: cols.into_iter().collect(),
            cost,
        }
    }

    /// Optimal matching restricted to the given rows and columns, with the
    /// dual-derived reduced cost of every admissible edge.
    fn optimal(
        &self,
        rows: &[usize],
        cols: &[usize],
        sentinel: f64,
    ) -> (Solution, BTreeMap<(usize, usize), f64>) {
        let mut reduced = BTreeMap::new();
        if rows.is_empty() || cols.is_empty() {
            return (
                Solution {
                    pairs: BTreeMap::new(),
                    sum: 0.0,
                },
                reduced,
            );
        }
        let transpose = rows.len() > cols.len();
        let (r_ids, c_ids) = if transpose { (cols, rows) } else { (rows, cols) };
        let edge = |r: usize, c: usize| {
            let key = if transpose { (c, r) } else { (r, c) };
            self.cost.get(&key).copied()
        };
        let matrix: Vec<Vec<f64>> = r_ids
            .iter()
            .map(|&r| c_ids.iter().map(|&c| edge(r, c).unwrap_or(sentinel)).collect())
            .collect();
        let a = hungarian::solve(&matrix);

        let mut pairs = BTreeMap::new();
        let mut sum = 0.0;
        for (ri, &ci) in a.row_to_col.iter().enumerate() {
            if let Some(c) = edge(r_ids[ri], c_ids[ci]) {
                let (p, g) = if transpose {
                    (c_ids[ci], r_ids[ri])
                } else {
                    (r_ids[ri], c_ids[ci])
                };
                pairs.insert(p, g);
                sum += c;
            }
        }
        for (ri, &r) in r_ids.iter().enumerate() {
            for (ci, &c) in c_ids.iter().enumerate() {
                if edge(r, c).is_some() {
                    let key = if transpose { (c, r) } else { (r, c) };
                    reduced.insert(key, a.reduced_cost(&matrix, ri, ci));
                }
            }
        }
        (Solution { pairs, sum }, reduced)
    }

    /// Among all optimal matchings, picks the one preferring the lowest
    /// ground-truth index for each prediction in ascending order.
    fn solve(&self, sentinel: f64) -> Solution {
        let (mut current, reduced) = self.optimal(&self.rows, &self.cols, sentinel);
        let target_card = current.card();
        let target_sum = current.sum;

        let mut free_rows: Vec<usize> = self.rows.clone();
        let mut free_cols: Vec<usize> = self.cols.clone();
        let mut fixed: BTreeMap<usize, usize> = BTreeMap::new();
        let mut fixed_sum = 0.0;

        for &row in &self.rows {
            let assigned = current.pairs.get(&row).copied();
            let candidates: Vec<usize> = free_cols
                .iter()
                .copied()
                .filter(|&c| assigned.is_none_or(|a| c < a))
                .filter(|&c| {
                    reduced
                        .get(&(row, c))
                        .is_some_and(|&r| r <= TIE_TOLERANCE)
                })
                .collect();
            for c in candidates {
                let rest_rows: Vec<usize> = free_rows.iter().copied().filter(|&r| r != row).collect();
                let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
                let (sub, _) = self.optimal(&rest_rows, &rest_cols, sentinel);
                let edge_cost = self.cost[&(row, c)];
                let card = fixed.len() + sub.card() + 1;
                let sum = fixed_sum + sub.sum + edge_cost;
                if card == target_card && (sum - target_sum).abs() <= TIE_TOLERANCE {
                    let mut pairs = fixed.clone();
                    pairs.extend(sub.pairs);
                    pairs.insert(row, c);
                    current = Solution { pairs, sum };
                    break;
                }
            }
            free_rows.retain(|&r| r != row);
            if let Some(&c) = current.pairs.get(&row) {
                free_cols.retain(|&x| x != c);
                fixed.insert(row, c);
                fixed_sum += self.cost[&(row, c)];
            }
        }
        current
    }
}

/// Globally optimal one-to-one assignment of predictions to ground truth.
///
/// Equal-cost optima are resolved towards the lowest prediction index, then
/// the lowest ground-truth index.
pub fn assign(
    preds: &[Detection],
    gts: &[Detection],
    iou_threshold: f64,
    policy: &CategoryPolicy,
) -> MatchOutcome {
    let edges = EdgeSet::new(preds, gts, iou_threshold, policy);
    let sol = edges.solve(sentinel_cost(preds.len()));
    let pairs: Vec<MatchPair> = sol
        .pairs
        .iter()
        .map(|(&p, &g)| MatchPair {
            pred: p,
            gt: g,
            iou: iou(&preds[p].bbox, &gts[g].bbox),
        })
        .collect();
    let tp = pairs.len();
    MatchOutcome {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
        pairs,
    }
}

/// Why predictions end up as false positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FpBreakdown {
    /// Box matches a ground truth; only the label is wrong.
    pub class_only: usize,
    /// Label matches an overlapping ground truth; the box misses the IoU
    /// threshold.
    pub box_only: usize,
    pub both_or_unmatched: usize,
}

impl FpBreakdown {
    pub fn total(&self) -> usize {
        self.class_only + self.box_only + self.both_or_unmatched
    }
}

impl std::ops::AddAssign for FpBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        self.class_only += rhs.class_only;
        self.box_only += rhs.box_only;
        self.both_or_unmatched += rhs.both_or_unmatched;
    }
}

/// Splits strict-policy false positives by cause.
pub fn fp_type_breakdown(preds: &[Detection], gts: &[Detection], iou_threshold: f64) -> FpBreakdown {
    let strict = assign(preds, gts, iou_threshold, &CategoryPolicy::Strict);
    let loose_class = assign(preds, gts, iou_threshold, &CategoryPolicy::None);
    // Any overlap counts; only labels must agree.
    let loose_box = assign(preds, gts, f64::MIN_POSITIVE, &CategoryPolicy::Strict);

    let matched = |o: &MatchOutcome| -> BTreeSet<usize> { o.pairs.iter().map(|p| p.pred).collect() };
    let strict_tp = matched(&strict);
    let class_ok = matched(&loose_class);
    let box_ok = matched(&loose_box);

    let mut out = FpBreakdown::default();
    for i in (0..preds.len()).filter(|i| !strict_tp.contains(i)) {
        if class_ok.contains(&i) {
            out.class_only += 1;
        } else if box_ok.contains(&i) {
            out.box_only += 1;
        } else {
            out.both_or_unmatched += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn det(x: f64, y: f64, w: f64, h: f64, cat: u32) -> Detection {
        Detection::new(BBox::new(x, y, x + w, y + h), cat, 0.5)
    }

    #[test]
    fn cost_matrix_entries() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        let same = det(0.0, 0.0, 10.0, 10.0, 1);
        // 10x8 inside 10x10: IoU 0.8.
        let other = det(0.0, 0.0, 10.0, 8.0, 2);
        let m = build_cost_matrix(&[same, other], &[g], 0.5, &CategoryPolicy::Strict);
        assert_eq!(m[0][0], 0.0);
        assert_eq!(m[1][0], sentinel_cost(2));
        let m = build_cost_matrix(&[other], &[g], 0.5, &CategoryPolicy::None);
        assert!((m[0][0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_match() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        // 10x6 inside 10x10: IoU 0.6.
        let p = det(0.0, 0.0, 10.0, 6.0, 1);
        let o = assign(&[p], &[g], 0.5, &CategoryPolicy::Strict);
        assert_eq!((o.tp, o.fp, o.fn_), (1, 0, 0));
    }

    #[test]
    fn best_of_two_predictions_wins() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        let p06 = det(0.0, 0.0, 10.0, 6.0, 1);
        let p07 = det(0.0, 0.0, 10.0, 7.0, 1);
        let o = assign(&[p06, p07], &[g], 0.5, &CategoryPolicy::Strict);
        assert_eq!((o.tp, o.fp, o.fn_), (1, 1, 0));
        assert_eq!(o.pairs[0].pred, 1);
        assert!((o.pairs[0].iou - 0.7).abs() < 1e-12);
    }

    #[test]
    fn wrong_class_is_fp_and_fn() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        let p = det(0.0, 0.0, 10.0, 9.0, 2);
        let o = assign(&[p], &[g], 0.5, &CategoryPolicy::Strict);
        assert_eq!((o.tp, o.fp, o.fn_), (0, 1, 1));
        let o = assign(&[p], &[g], 0.5, &CategoryPolicy::None);
        assert_eq!((o.tp, o.fp, o.fn_), (1, 0, 0));
    }

    #[test]
    fn low_iou_is_fp_and_fn() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        let p = det(0.0, 0.0, 10.0, 3.0, 1);
        let o = assign(&[p], &[g], 0.5, &CategoryPolicy::Strict);
        assert_eq!((o.tp, o.fp, o.fn_), (0, 1, 1));
    }

    #[test]
    fn ties_prefer_lowest_prediction_then_ground_truth() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        let dup = det(0.0, 0.0, 10.0, 9.0, 1);
        let o = assign(&[dup, dup, dup], &[g], 0.5, &CategoryPolicy::Strict);
        assert_eq!(o.pairs.len(), 1);
        assert_eq!(o.pairs[0].pred, 0);

        // Two identical ground truths, two identical predictions.
        let o = assign(&[dup, dup], &[g, g], 0.5, &CategoryPolicy::Strict);
        assert_eq!(
            o.pairs.iter().map(|p| (p.pred, p.gt)).collect::<Vec<_>>(),
            vec![(0, 0), (1, 1)]
        );
    }

    #[test]
    fn empty_inputs() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        let o = assign(&[], &[g], 0.5, &CategoryPolicy::Strict);
        assert_eq!((o.tp, o.fp, o.fn_), (0, 0, 1));
        let o = assign(&[g], &[], 0.5, &CategoryPolicy::Strict);
        assert_eq!((o.tp, o.fp, o.fn_), (0, 1, 0));
    }

    #[test]
    fn clusters_relax_labels_within_groups() {
        let policy = CategoryPolicy::clusters(vec![vec![1, 2], vec![3]]).unwrap();
        assert!(policy.compatible(1, 2));
        assert!(!policy.compatible(2, 3));
        assert!(policy.compatible(7, 7));
        assert!(!policy.compatible(7, 1));
        assert!(CategoryPolicy::clusters(vec![vec![1, 2], vec![2]]).is_err());
    }

    #[test]
    fn policy_json() {
        let p: CategoryPolicy =
            serde_json::from_str(r#"{"mode":"clusters","clusters":[[0,1],[2]]}"#).unwrap();
        assert_eq!(p, CategoryPolicy::Clusters(vec![vec![0, 1], vec![2]]));
        let p: CategoryPolicy = serde_json::from_str(r#"{"mode":"none"}"#).unwrap();
        assert_eq!(p, CategoryPolicy::None);
        assert!(serde_json::from_str::<CategoryPolicy>(r#"{"mode":"clusters"}"#).is_err());
        assert!(serde_json::from_str::<CategoryPolicy>(
            r#"{"mode":"clusters","clusters":[[0],[0]]}"#
        )
        .is_err());
    }

    #[test]
    fn fp_breakdown_cases() {
        let g = det(0.0, 0.0, 10.0, 10.0, 1);
        let class_only = det(0.0, 0.0, 10.0, 9.0, 2);
        assert_eq!(
            fp_type_breakdown(&[class_only], &[g], 0.5),
            FpBreakdown {
                class_only: 1,
                ..Default::default()
            }
        );
        let box_only = det(0.0, 0.0, 10.0, 3.0, 1);
        assert_eq!(
            fp_type_breakdown(&[box_only], &[g], 0.5),
            FpBreakdown {
                box_only: 1,
                ..Default::default()
            }
        );
        let far = det(50.0, 50.0, 5.0, 5.0, 1);
        assert_eq!(
            fp_type_breakdown(&[far], &[g], 0.5),
            FpBreakdown {
                both_or_unmatched: 1,
                ..Default::default()
            }
        );
    }
}

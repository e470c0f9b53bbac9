//! Bias (threshold) selection for F1.
//!
//! A [`ScoreTable`] records bias-free detector output once; F1 for any
//! bias vector is then evaluated without re-running detection. Positives
//! keep, per component, the best raw score among windows matching the
//! ground truth. Negative images keep, per component, the raw candidates
//! that survive suppression; at evaluation time candidates of all
//! components are thresholded and suppressed jointly, as in detection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::detect::{nms, Detection, Detector, Window};
use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::harmony::{optimize_seeded, HsOutcome, HsParams};
use crate::image::Image;

/// Minimum IoU for a window to count as matching a ground-truth box.
pub const MATCH_IOU: f64 = 0.5;

/// One bias per component.
pub type BiasVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeCandidate {
    pub component: usize,
    pub raw: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    components: usize,
    /// Per positive box, per component; −∞ where no window matched.
    positives: Vec<Vec<f64>>,
    /// Per negative image.
    negatives: Vec<Vec<NegativeCandidate>>,
    nms_overlap: f64,
}

impl ScoreTable {
    pub fn new(
        components: usize,
        positives: Vec<Vec<f64>>,
        negatives: Vec<Vec<NegativeCandidate>>,
        nms_overlap: f64,
    ) -> Result<Self> {
        if components == 0 {
            return Err(Error::Data("score table needs at least one component".into()));
        }
        if positives.iter().any(|row| row.len() != components) {
            return Err(Error::Size(format!("every positive row needs {components} scores")));
        }
        let bad_pos = positives.iter().flatten().any(|s| s.is_nan() || *s == f64::INFINITY);
        let bad_neg = negatives.iter().flatten().any(|c| !c.raw.is_finite() || c.component >= components);
        if bad_pos || bad_neg {
            return Err(Error::Data("scores must be finite (or −∞ for unmatched positives)".into()));
        }
        Ok(ScoreTable { components, positives, negatives, nms_overlap })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn positives(&self) -> &[Vec<f64>] {
        &self.positives
    }

    pub fn negatives(&self) -> &[Vec<NegativeCandidate>] {
        &self.negatives
    }

    /// Rows in the table: one per positive box plus one per negative image.
    pub fn row_count(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    /// Every finite score observed for component `k`.
    pub fn component_scores(&self, k: usize) -> Vec<f64> {
        let pos = self.positives.iter().map(|row| row[k]).filter(|s| s.is_finite());
        let neg = self.negatives.iter().flatten().filter(|c| c.component == k).map(|c| c.raw);
        pos.chain(neg).collect()
    }

    /// Sub-table for the listed components, renumbered in list order.
    pub fn select(&self, components: &[usize]) -> Result<ScoreTable> {
        if let Some(&k) = components.iter().find(|&&k| k >= self.components) {
            return Err(Error::Index { index: k, len: self.components });
        }
        let positives = self.positives.iter().map(|row| components.iter().map(|&k| row[k]).collect()).collect();
        let negatives = self
            .negatives
            .iter()
            .map(|image| {
                image
                    .iter()
                    .filter_map(|c| {
                        let new = components.iter().position(|&k| k == c.component)?;
                        Some(NegativeCandidate { component: new, ..*c })
                    })
                    .collect()
            })
            .collect();
        ScoreTable::new(components.len(), positives, negatives, self.nms_overlap)
    }

    /// (true positives, false positives, false negatives) at `biases`.
    pub fn counts(&self, biases: &[f64]) -> (usize, usize, usize) {
        let tp = self
            .positives
            .iter()
            .filter(|row| row.iter().zip(biases).any(|(s, b)| s - b >= 0.0))
            .count();
        let fn_ = self.positives.len() - tp;
        let mut fp = 0;
        for image in &self.negatives {
            let surviving: Vec<Detection> = image
                .iter()
                .filter(|c| c.raw - biases[c.component] >= 0.0)
                .map(|c| Detection {
                    bbox: c.bbox,
                    score: c.raw - biases[c.component],
                    component_index: c.component,
                    level_index: 0,
                })
                .collect();
            fp += match surviving.len() {
                0 | 1 => surviving.len(),
                _ => nms(surviving, self.nms_overlap).len(),
            };
        }
        (tp, fp, fn_)
    }
}

/// A positive image with its ground-truth boxes. `loo` optionally carries,
/// per box, a leave-one-out score for the component the box trained.
#[derive(Debug, Clone)]
pub struct PositiveImage<'a> {
    pub image: &'a Image,
    pub boxes: Vec<BBox>,
    pub loo: Vec<Option<(usize, f64)>>,
}

impl<'a> PositiveImage<'a> {
    pub fn new(image: &'a Image, boxes: Vec<BBox>) -> Self {
        let loo = vec![None; boxes.len()];
        PositiveImage { image, boxes, loo }
    }
}

/// Per-component best raw score over windows matching each box.
pub fn positive_rows(windows: &[Window], boxes: &[BBox], components: usize) -> Vec<Vec<f64>> {
    boxes
        .iter()
        .map(|gt| {
            let mut row = vec![f64::NEG_INFINITY; components];
            for w in windows {
                if w.raw > row[w.component_index] && w.bbox.iou(gt) >= MATCH_IOU {
                    row[w.component_index] = w.raw;
                }
            }
            row
        })
        .collect()
}

/// Per-component suppressed raw candidates of a negative image, at most
/// `limit` per component.
pub fn negative_candidates(windows: &[Window], components: usize, overlap: f64, limit: usize) -> Vec<NegativeCandidate> {
    let mut out = Vec::new();
    for k in 0..components {
        let dets: Vec<Detection> = windows
            .iter()
            .filter(|w| w.component_index == k)
            .map(|w| Detection { bbox: w.bbox, score: w.raw, component_index: k, level_index: w.level_index })
            .collect();
        for d in nms(dets, overlap).into_iter().take(limit) {
            out.push(NegativeCandidate { component: k, raw: d.score, bbox: d.bbox });
        }
    }
    out
}

/// Run the detector without thresholds over positives and negatives.
pub fn build_score_table(
    detector: &mut Detector<'_>,
    positives: &[PositiveImage<'_>],
    negatives: &[&Image],
) -> Result<ScoreTable> {
    if positives.iter().all(|p| p.boxes.is_empty()) {
        return Err(Error::Data("no positive boxes".into()));
    }
    if negatives.is_empty() {
        return Err(Error::Data("no negative images".into()));
    }
    let k = detector.mixture().len();
    let config = detector.config();
    let mut pos_rows = Vec::new();
    for p in positives {
        let windows = detector.windows(p.image)?;
        let mut rows = positive_rows(&windows, &p.boxes, k);
        for (row, loo) in rows.iter_mut().zip(&p.loo) {
            if let Some((comp, score)) = *loo {
                if comp < k {
                    row[comp] = score;
                }
            }
        }
        pos_rows.extend(rows);
    }
    let mut neg = Vec::with_capacity(negatives.len());
    for image in negatives {
        let windows = detector.windows(image)?;
        neg.push(negative_candidates(&windows, k, config.nms_overlap, config.max_detections));
    }
    ScoreTable::new(k, pos_rows, neg, config.nms_overlap)
}

/// F1 of the mixture at `biases`; 0 when nothing is detected.
pub fn f1_for_biases(table: &ScoreTable, biases: &[f64]) -> f64 {
    assert_eq!(biases.len(), table.components, "bias vector length");
    let (tp, fp, fn_) = table.counts(biases);
    f1_from_counts(tp, fp, fn_)
}

pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Candidate biases for component `k`: its lowest score (accept
/// everything) and the midpoints between consecutive distinct scores.
pub fn candidate_biases(table: &ScoreTable, k: usize) -> Vec<f64> {
    let mut scores = table.component_scores(k);
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut out = Vec::with_capacity(scores.len());
    if let Some(&lo) = scores.first() {
        out.push(lo);
    }
    for pair in scores.windows(2) {
        out.push(0.5 * (pair[0] + pair[1]));
    }
    out
}

/// Bias maximizing F1 of component `k` alone; ties go to the larger bias.
/// Returns `(bias, f1)`.
pub fn optimize_component_bias(table: &ScoreTable, k: usize) -> (f64, f64) {
    let mut biases = vec![f64::INFINITY; table.components];
    let mut best = (f64::INFINITY, 0.0);
    for b in candidate_biases(table, k) {
        biases[k] = b;
        let f = f1_for_biases(table, &biases);
        if f > best.1 || (f == best.1 && b > best.0) || best.0 == f64::INFINITY {
            best = (b, f);
        }
    }
    if best.0 == f64::INFINITY {
        // No finite score at all for this component.
        best.0 = 0.0;
    }
    best
}

/// Search box for joint optimization: each component's score range padded
/// by 1% of its width.
pub fn joint_bounds(table: &ScoreTable) -> Vec<(f64, f64)> {
    (0..table.components)
        .map(|k| {
            let scores = table.component_scores(k);
            let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                return (-1.0, 1.0);
            }
            let delta = (0.01 * (hi - lo)).max(1e-6 * (1.0 + hi.abs().max(lo.abs())));
            (lo - delta, hi + delta)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub biases: BiasVector,
    pub f1: f64,
    /// Per-component optima combined without interaction.
    pub independent: BiasVector,
    pub independent_f1: f64,
    pub search: HsOutcome,
}

/// Jointly optimize all biases with Harmony Search. The memory is seeded
/// with the independent per-component optima and any `extra_seeds`, so the
/// result is never worse than those vectors.
pub fn optimize_joint_biases(table: &ScoreTable, params: &HsParams, extra_seeds: &[Vec<f64>]) -> Result<JointOutcome> {
    if table.positives.is_empty() {
        return Err(Error::Data("score table has no positives".into()));
    }
    let independent: BiasVector = (0..table.components).map(|k| optimize_component_bias(table, k).0).collect();
    let independent_f1 = f1_for_biases(table, &independent);
    let bounds = joint_bounds(table);
    let mut seeds = vec![independent.clone()];
    seeds.extend(extra_seeds.iter().cloned());
    let search = optimize_seeded(|b| f1_for_biases(table, b), &bounds, params, &seeds)?;
    Ok(JointOutcome { biases: search.best.clone(), f1: search.fitness, independent, independent_f1, search })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neg(component: usize, raw: f64, x: f64) -> NegativeCandidate {
        NegativeCandidate { component, raw, bbox: BBox::new(x, 0.0, 10.0, 10.0) }
    }

    #[test]
    fn selected_components_keep_their_scores() {
        let t = ScoreTable::new(3, vec![vec![1.0, 2.0, 3.0]], vec![vec![neg(0, 0.5, 0.0), neg(2, 0.7, 40.0)]], 0.5)
            .unwrap();
        let s = t.select(&[2, 0]).unwrap();
        assert_eq!(s.positives(), &[vec![3.0, 1.0]]);
        assert_eq!(s.negatives()[0].iter().map(|c| (c.component, c.raw)).collect::<Vec<_>>(), [(1, 0.5), (0, 0.7)]);
        assert!(t.select(&[3]).is_err());
    }

    #[test]
    fn f1_formula() {
        assert!((f1_from_counts(2, 1, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_from_counts(0, 3, 2), 0.0);
    }

    #[test]
    fn unmatched_positive_is_always_missed() {
        let t = ScoreTable::new(1, vec![vec![f64::NEG_INFINITY], vec![2.0]], vec![vec![]], 0.5).unwrap();
        for b in [-1e9, 0.0, 1.9] {
            assert_eq!(t.counts(&[b]), (1, 0, 1));
        }
    }

    #[test]
    fn infinite_biases_detect_nothing() {
        let t = ScoreTable::new(2, vec![vec![1.0, 2.0]], vec![vec![neg(0, 5.0, 0.0)]], 0.5).unwrap();
        assert_eq!(f1_for_biases(&t, &[f64::INFINITY, f64::INFINITY]), 0.0);
    }

    #[test]
    fn midpoint_sweep() {
        let t = ScoreTable::new(1, vec![vec![2.0], vec![3.0]], vec![vec![neg(0, 0.0, 0.0)], vec![neg(0, 1.0, 0.0)]], 0.5)
            .unwrap();
        assert_eq!(optimize_component_bias(&t, 0), (1.5, 1.0));
    }

    #[test]
    fn identical_scores_pick_that_score() {
        let t = ScoreTable::new(1, vec![vec![1.0], vec![1.0]], vec![vec![neg(0, 1.0, 0.0)]], 0.5).unwrap();
        let (b, f) = optimize_component_bias(&t, 0);
        assert_eq!(b, 1.0);
        assert!((f - f1_from_counts(2, 1, 0)).abs() < 1e-15);
    }

    #[test]
    fn negatives_are_suppressed_across_components() {
        // Two overlapping negative candidates from different components
        // count as one false positive.
        let t = ScoreTable::new(2, vec![vec![3.0, 3.0]], vec![vec![neg(0, 2.0, 0.0), neg(1, 2.5, 1.0)]], 0.5).unwrap();
        assert_eq!(t.counts(&[0.0, 0.0]), (1, 1, 0));
        assert_eq!(t.counts(&[0.0, 10.0]), (1, 1, 0));
        assert_eq!(t.counts(&[10.0, 10.0]), (0, 0, 1));
    }
}

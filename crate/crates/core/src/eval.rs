//! Average precision and F1 reporting against ground truth.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::detect::{DetectConfig, Detection, Detector};
use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::image::Image;
use crate::mixture::Mixture;

pub const DEFAULT_IOU: f64 = 0.5;

/// A detection's rank entry: its score and whether it matched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedLabel {
    pub score: f64,
    pub true_positive: bool,
}

/// Label detections across images. Detections are processed by descending
/// score; each claims the highest-IoU unclaimed ground truth of its image
/// when that IoU reaches `iou_threshold`.
pub fn match_and_count(detections: &[Vec<Detection>], ground_truth: &[Vec<BBox>], iou_threshold: f64) -> Vec<RankedLabel> {
    let mut order: Vec<(usize, usize)> = detections
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.len()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|a, b| {
        detections[b.0][b.1].score.total_cmp(&detections[a.0][a.1].score).then(a.cmp(b))
    });
    let mut claimed: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let mut labels = Vec::with_capacity(order.len());
    for (i, j) in order {
        let d = &detections[i][j];
        let gts = ground_truth.get(i).map(Vec::as_slice).unwrap_or(&[]);
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[i][g] {
                continue;
            }
            let iou = d.bbox.iou(gt);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let tp = match best {
            Some((g, iou)) if iou >= iou_threshold => {
                claimed[i][g] = true;
                true
            }
            _ => false,
        };
        labels.push(RankedLabel { score: d.score, true_positive: tp });
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall after each ranked detection.
pub fn pr_curve(labels: &[RankedLabel], total_ground_truth: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            tp += l.true_positive as usize;
            PrPoint {
                threshold: l.score,
                precision: tp as f64 / (i + 1) as f64,
                recall: if total_ground_truth == 0 { 0.0 } else { tp as f64 / total_ground_truth as f64 },
            }
        })
        .collect()
}

/// All-points interpolated AP: area under the precision envelope (precision
/// made non-increasing in recall).
pub fn average_precision(labels: &[bool], total_ground_truth: usize) -> f64 {
    if total_ground_truth == 0 {
        return 0.0;
    }
    let n = labels.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        tp += l as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / total_ground_truth as f64);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        if recall[i] > prev_recall {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    ap
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OperatingPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassReport {
    pub class_name: String,
    /// `None` when the split holds no ground truth for the class.
    pub ap: Option<f64>,
    pub pr_curve: Vec<PrPoint>,
    pub best_f1: Option<OperatingPoint>,
    pub ground_truth: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl ClassReport {
    pub fn is_empty(&self) -> bool {
        self.ap.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    /// Mean AP over classes with ground truth; `None` if there are none.
    pub mean_ap: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Report for one class from its detections and ground truth per image.
pub fn class_report(class_name: &str, detections: &[Vec<Detection>], ground_truth: &[Vec<BBox>], iou: f64) -> ClassReport {
    let total: usize = ground_truth.iter().map(Vec::len).sum();
    let labels = match_and_count(detections, ground_truth, iou);
    let curve = pr_curve(&labels, total);
    let tp = labels.iter().filter(|l| l.true_positive).count();
    let fp = labels.len() - tp;
    let best_f1 = curve
        .iter()
        .map(|p| {
            let f1 = if p.precision + p.recall > 0.0 {
                2.0 * p.precision * p.recall / (p.precision + p.recall)
            } else {
                0.0
            };
            OperatingPoint { threshold: p.threshold, precision: p.precision, recall: p.recall, f1 }
        })
        .fold(None, |best: Option<OperatingPoint>, p| match best {
            Some(b) if b.f1 >= p.f1 => Some(b),
            _ => Some(p),
        });
    let flags: Vec<bool> = labels.iter().map(|l| l.true_positive).collect();
    ClassReport {
        class_name: class_name.into(),
        ap: (total > 0).then(|| average_precision(&flags, total)),
        pr_curve: curve,
        best_f1: if total > 0 { best_f1 } else { None },
        ground_truth: total,
        true_positives: tp,
        false_positives: fp,
        false_negatives: total - tp,
    }
}

/// Combine class reports; mAP is the mean over non-empty classes.
pub fn combine(per_class: Vec<ClassReport>) -> EvalReport {
    let aps: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let mean_ap = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    EvalReport {
        true_positives: per_class.iter().map(|c| c.true_positives).sum(),
        false_positives: per_class.iter().map(|c| c.false_positives).sum(),
        false_negatives: per_class.iter().map(|c| c.false_negatives).sum(),
        per_class,
        mean_ap,
    }
}

/// An image of an evaluation split with its labeled boxes.
#[derive(Debug, Clone)]
pub struct EvalImage<'a> {
    pub image: &'a Image,
    pub boxes: Vec<(BBox, String)>,
}

/// Run every mixture over the split and score it against the boxes of its
/// own class.
pub fn evaluate(mixtures: &[&Mixture], split: &[EvalImage<'_>], config: DetectConfig, iou: f64) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let mut per_class = Vec::with_capacity(mixtures.len());
    for mixture in mixtures {
        let mut detector = Detector::new(mixture, config)?;
        let mut dets = Vec::with_capacity(split.len());
        let mut gts = Vec::with_capacity(split.len());
        for item in split {
            dets.push(detector.detect(item.image)?);
            gts.push(
                item.boxes
                    .iter()
                    .filter(|(_, c)| *c == mixture.class_name)
                    .map(|(b, _)| *b)
                    .collect::<Vec<_>>(),
            );
        }
        per_class.push(class_report(&mixture.class_name, &dets, &gts, iou));
    }
    Ok(combine(per_class))
}

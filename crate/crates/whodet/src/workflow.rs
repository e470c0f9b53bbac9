//! Dataset-level learning, optimization and evaluation shared by the CLI
//! and the service.

use log::info;
use rayon::prelude::*;
use whodet_core::detect::DetectConfig;
use whodet_core::eval::{EvalImage, EvalReport};
use whodet_core::harmony::HsParams;
use whodet_core::learn::LearnParams;
use whodet_core::mixture::{Mixture, Provenance};
use whodet_core::threshold::{optimize_joint_biases, JointOutcome, PositiveImage};
use whodet_core::{BBox, BackgroundStats, Image};

use crate::dataset::{sample_split_negatives, AnnotatedImage, DatasetError, DatasetIndex, Split};
use crate::error::{AppError, AppResult};
use crate::imageio;
use crate::pipeline::{self, Positive};

/// Called with a completion fraction in `[0, 1]`; values never decrease.
pub type Progress<'a> = &'a (dyn Fn(f64) + Sync);

pub fn no_progress(_: f64) {}

/// Images of one class together with its boxes.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub images: Vec<Image>,
    pub boxes: Vec<Vec<BBox>>,
}

impl TrainingSet {
    pub fn new(images: Vec<Image>, boxes: Vec<Vec<BBox>>) -> Self {
        assert_eq!(images.len(), boxes.len());
        TrainingSet { images, boxes }
    }

    pub fn positives(&self) -> Vec<Positive<'_>> {
        self.images.iter().zip(&self.boxes).map(|(image, b)| Positive { image, boxes: b.clone() }).collect()
    }

    pub fn box_count(&self) -> usize {
        self.boxes.iter().map(Vec::len).sum()
    }

    fn plain_positives(&self) -> Vec<PositiveImage<'_>> {
        self.images.iter().zip(&self.boxes).map(|(image, b)| PositiveImage::new(image, b.clone())).collect()
    }
}

/// Positives and negatives for one class.
#[derive(Debug, Clone, Default)]
pub struct ClassData {
    pub positives: TrainingSet,
    pub negatives: Vec<Image>,
}

impl ClassData {
    pub fn negative_refs(&self) -> Vec<&Image> {
        self.negatives.iter().collect()
    }
}

pub fn load_images(images: &[&AnnotatedImage]) -> AppResult<Vec<Image>> {
    images.par_iter().map(|i| imageio::load(&i.path).map_err(AppError::from)).collect()
}

/// Number of negative images for `positive_boxes` positives.
pub fn negative_count(positive_boxes: usize, neg_ratio: f64) -> usize {
    (positive_boxes as f64 * neg_ratio).ceil() as usize
}

/// Load the positives of `class_name` in `split` and a seeded sample of
/// negative images from the other classes of the same split.
pub fn class_data(
    index: &DatasetIndex,
    class_name: &str,
    split: Split,
    neg_ratio: f64,
    seed: u64,
) -> AppResult<ClassData> {
    let images = index.images(class_name, split)?;
    let images: Vec<&AnnotatedImage> = images.into_iter().filter(|i| i.boxes_of(class_name).next().is_some()).collect();
    if images.is_empty() {
        return Err(DatasetError::Data(format!("no {class_name:?} boxes in the {split} split")).into());
    }
    let boxes: Vec<Vec<BBox>> = images.iter().map(|i| i.boxes_of(class_name).collect()).collect();
    let positives = TrainingSet::new(load_images(&images)?, boxes);
    let count = negative_count(positives.box_count(), neg_ratio);
    let negatives = load_images(&sample_split_negatives(index, split, class_name, count, seed)?)?;
    info!(
        "{class_name}: {} positive boxes in {} images, {} negative images",
        positives.box_count(),
        positives.images.len(),
        negatives.len()
    );
    Ok(ClassData { positives, negatives })
}

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub detect: DetectConfig,
    pub hs: HsParams,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub mixture: Mixture,
    pub joint: Option<JointOutcome>,
}

/// Learn a mixture and, when `optimize` is given, set its biases jointly
/// using leave-one-out scores for the training positives.
pub fn learn(
    class_name: &str,
    data: &ClassData,
    stats: &BackgroundStats,
    params: &LearnParams,
    optimize: Option<&OptimizeOptions>,
    progress: Progress<'_>,
) -> AppResult<Trained> {
    progress(0.0);
    let positives = data.positives.positives();
    let outcome = pipeline::learn(class_name, &positives, stats, params, Provenance::SourceDataset)?;
    progress(0.5);
    let mut mixture = outcome.mixture.clone();
    let joint = match optimize {
        Some(opt) => {
            let loo = pipeline::with_loo(&positives, &outcome, 0);
            Some(pipeline::optimize(&mut mixture, &loo, &data.negative_refs(), opt.detect, &opt.hs, &[])?)
        }
        None => None,
    };
    progress(1.0);
    Ok(Trained { mixture, joint })
}

/// Re-optimize the biases of an existing mixture on `data`. The training
/// samples of the mixture are unknown here, so raw scores are used.
pub fn optimize(mixture: &Mixture, data: &ClassData, opt: &OptimizeOptions, progress: Progress<'_>) -> AppResult<Trained> {
    progress(0.0);
    let mut mixture = mixture.clone();
    let positives = data.positives.plain_positives();
    let joint = pipeline::optimize(&mut mixture, &positives, &data.negative_refs(), opt.detect, &opt.hs, &[])?;
    progress(1.0);
    Ok(Trained { mixture, joint: Some(joint) })
}

/// Append in-situ components learned from `data` and re-optimize all
/// biases jointly. The search is seeded with the old biases next to the
/// best biases for the new components alone, and with the old components
/// switched off, so the adapted F1 on `data` is never below either.
pub fn adapt(
    base: &Mixture,
    data: &ClassData,
    stats: &BackgroundStats,
    params: &LearnParams,
    opt: &OptimizeOptions,
    progress: Progress<'_>,
) -> AppResult<Trained> {
    progress(0.0);
    let positives = data.positives.positives();
    let outcome = pipeline::adapt(base, &positives, stats, params)?;
    progress(0.4);
    let mut mixture = outcome.mixture.clone();
    let old = base.len();
    let loo = pipeline::with_loo(&positives, &outcome, old);
    let table = pipeline::score_table(&mixture, opt.detect, &loo, &data.negative_refs())?;
    progress(0.8);
    let added: Vec<usize> = (old..mixture.len()).collect();
    let own = optimize_joint_biases(&table.select(&added)?, &opt.hs, &[])?;
    let seeds = pipeline::adaptation_seeds(&base.biases(), &own.biases, f64::INFINITY);
    let joint = optimize_joint_biases(&table, &opt.hs, &seeds)?;
    info!("adapted joint F1 {:.4} (new components alone {:.4})", joint.f1, own.f1);
    mixture.set_biases(&joint.biases)?;
    progress(1.0);
    Ok(Trained { mixture, joint: Some(joint) })
}

/// Every image of `split` with all of its boxes, loaded in parallel.
pub fn load_split(index: &DatasetIndex, split: Split) -> AppResult<(Vec<Image>, Vec<Vec<(BBox, String)>>)> {
    let images = index.split_images(split);
    let loaded = load_images(&images)?;
    let boxes = images.iter().map(|i| i.boxes.iter().map(|b| (b.bbox(), b.class_name.clone())).collect()).collect();
    Ok((loaded, boxes))
}

pub fn evaluate_split(
    mixtures: &[&Mixture],
    index: &DatasetIndex,
    split: Split,
    config: DetectConfig,
    iou: f64,
) -> AppResult<EvalReport> {
    let (images, boxes) = load_split(index, split)?;
    let eval: Vec<EvalImage<'_>> =
        images.iter().zip(boxes).map(|(image, boxes)| EvalImage { image, boxes }).collect();
    Ok(pipeline::evaluate(mixtures, &eval, config, iou)?)
}

/// One detection in the JSON schema shared by the CLI and the service.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectionRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub component: usize,
    pub level: usize,
}

impl From<&whodet_core::Detection> for DetectionRecord {
    fn from(d: &whodet_core::Detection) -> Self {
        DetectionRecord {
            x: d.bbox.x,
            y: d.bbox.y,
            w: d.bbox.w,
            h: d.bbox.h,
            score: d.score,
            component: d.component_index,
            level: d.level_index,
        }
    }
}

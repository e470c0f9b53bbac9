//! End-to-end glue: background statistics over a corpus, learning with
//! leave-one-out bookkeeping, and joint bias optimization.

use log::{debug, info};
use rayon::prelude::*;
use whodet_core::background::FeatureConfig;
use whodet_core::detect::{DetectConfig, Detector};
use whodet_core::harmony::HsParams;
use whodet_core::hog::build_pyramid;
use whodet_core::learn::{adapt_mixture, learn_mixture, LearnOutcome, LearnParams, Sample};
use whodet_core::mixture::{Mixture, Provenance};
use whodet_core::eval::{class_report, combine, EvalImage, EvalReport};
use whodet_core::threshold::{
    negative_candidates, optimize_joint_biases, positive_rows, JointOutcome, PositiveImage, ScoreTable,
};
use whodet_core::{BBox, BackgroundStats, Detection, Error, Image, Result};

const STATS_CHUNK: usize = 8;
const STATS_BATCH: usize = 16;

fn accumulate_image(stats: &mut BackgroundStats, image: &Image, cell_size: usize, interval: usize) -> Result<()> {
    let span = 2 * stats.max_offset() + 1;
    let pyramid = match build_pyramid(image, cell_size, interval, (span, span)) {
        Ok(p) => p,
        Err(Error::Size(_)) => {
            debug!("skipping {}x{} image: too small", image.width(), image.height());
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    for level in pyramid.levels() {
        stats.accumulate(level)?;
    }
    Ok(())
}

/// Accumulate background statistics over every pyramid level of every
/// image. Levels with fewer than `2·max_offset + 1` cells along a side are
/// skipped; images too small for any level are ignored. Images are loaded
/// through `load` on worker threads; fixed chunking keeps the result
/// independent of the thread count.
pub fn compute_stats<T: Sync>(
    items: &[T],
    load: impl Fn(&T) -> Result<Option<Image>> + Sync,
    cell_size: usize,
    max_offset: usize,
    interval: usize,
) -> Result<BackgroundStats> {
    let empty = BackgroundStats::new(FeatureConfig { cell_size }, max_offset);
    let mut total = empty.clone();
    for batch in items.chunks(STATS_CHUNK * STATS_BATCH) {
        let partial: Vec<BackgroundStats> = batch
            .par_chunks(STATS_CHUNK)
            .map(|chunk| {
                let mut stats = empty.clone();
                for item in chunk {
                    if let Some(image) = load(item)? {
                        accumulate_image(&mut stats, &image, cell_size, interval)?;
                    }
                }
                Ok(stats)
            })
            .collect::<Result<_>>()?;
        for p in &partial {
            total.merge(p)?;
        }
    }
    total.finalize()?;
    info!("background statistics over {} cells", total.cell_count());
    Ok(total)
}

/// [`compute_stats`] over images already in memory.
pub fn compute_stats_in_memory(
    images: &[Image],
    cell_size: usize,
    max_offset: usize,
    interval: usize,
) -> Result<BackgroundStats> {
    compute_stats(images, |i| Ok(Some(i.clone())), cell_size, max_offset, interval)
}

/// An image and the boxes of one class inside it.
#[derive(Debug, Clone)]
pub struct Positive<'a> {
    pub image: &'a Image,
    pub boxes: Vec<BBox>,
}

fn samples<'a>(positives: &[Positive<'a>]) -> Result<Vec<Sample<'a>>> {
    positives
        .iter()
        .flat_map(|p| p.boxes.iter().map(move |b| Sample::new(p.image, *b)))
        .collect()
}

/// Attach leave-one-out scores from `outcome` to its training images, in
/// the sample order used for learning. `offset` is the index of the
/// outcome's first component in the final mixture.
pub fn with_loo<'a>(positives: &[Positive<'a>], outcome: &LearnOutcome, offset: usize) -> Vec<PositiveImage<'a>> {
    let mut index = 0;
    positives
        .iter()
        .map(|p| {
            let mut pi = PositiveImage::new(p.image, p.boxes.clone());
            for slot in pi.loo.iter_mut() {
                *slot = outcome.loo_for_sample(index).map(|(k, s)| (k + offset, s));
                index += 1;
            }
            pi
        })
        .collect()
}

pub fn learn(
    class_name: &str,
    positives: &[Positive<'_>],
    stats: &BackgroundStats,
    params: &LearnParams,
    provenance: Provenance,
) -> Result<LearnOutcome> {
    let samples = samples(positives)?;
    let outcome = learn_mixture(class_name, &samples, stats, params, provenance)?;
    info!("learned {} component(s) for {class_name} from {} samples", outcome.mixture.len(), samples.len());
    Ok(outcome)
}

pub fn adapt(
    base: &Mixture,
    positives: &[Positive<'_>],
    stats: &BackgroundStats,
    params: &LearnParams,
) -> Result<LearnOutcome> {
    let samples = samples(positives)?;
    let outcome = adapt_mixture(base, &samples, stats, params)?;
    info!(
        "appended {} in-situ component(s) to {} from {} samples",
        outcome.mixture.len() - base.len(),
        base.class_name,
        samples.len()
    );
    Ok(outcome)
}

/// Threshold-free score table over positives and negatives. Images are
/// scored in parallel with one detector per worker.
pub fn score_table(
    mixture: &Mixture,
    config: DetectConfig,
    positives: &[PositiveImage<'_>],
    negatives: &[&Image],
) -> Result<ScoreTable> {
    if positives.iter().all(|p| p.boxes.is_empty()) {
        return Err(Error::Data("no positive boxes".into()));
    }
    if negatives.is_empty() {
        return Err(Error::Data("no negative images".into()));
    }
    Detector::new(mixture, config)?;
    let k = mixture.len();
    let new_detector = || Detector::new(mixture, config).expect("validated above");
    let pos: Vec<Vec<Vec<f64>>> = positives
        .par_iter()
        .map_init(new_detector, |det, p| {
            let mut rows = positive_rows(&det.windows(p.image)?, &p.boxes, k);
            for (row, loo) in rows.iter_mut().zip(&p.loo) {
                if let Some((comp, score)) = *loo {
                    if comp < k {
                        row[comp] = score;
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let neg = negatives
        .par_iter()
        .map_init(new_detector, |det, image| {
            Ok(negative_candidates(&det.windows(image)?, k, config.nms_overlap, config.max_detections))
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::new(k, pos.into_iter().flatten().collect(), neg, config.nms_overlap)
}

/// Detections for many images, in input order.
pub fn detect_all(mixture: &Mixture, config: DetectConfig, images: &[&Image]) -> Result<Vec<Vec<Detection>>> {
    Detector::new(mixture, config)?;
    images
        .par_iter()
        .map_init(|| Detector::new(mixture, config).expect("validated above"), |det, image| det.detect(image))
        .collect()
}

/// Evaluate every mixture on every image of the split against the boxes
/// of its own class.
pub fn evaluate(mixtures: &[&Mixture], split: &[EvalImage<'_>], config: DetectConfig, iou: f64) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let images: Vec<&Image> = split.iter().map(|s| s.image).collect();
    let mut per_class = Vec::with_capacity(mixtures.len());
    for mixture in mixtures {
        let dets = detect_all(mixture, config, &images)?;
        let gts: Vec<Vec<BBox>> = split
            .iter()
            .map(|s| s.boxes.iter().filter(|(_, c)| *c == mixture.class_name).map(|(b, _)| *b).collect())
            .collect();
        per_class.push(class_report(&mixture.class_name, &dets, &gts, iou));
    }
    Ok(combine(per_class))
}

/// Build the score table and set the mixture's biases to the joint optimum.
pub fn optimize(
    mixture: &mut Mixture,
    positives: &[PositiveImage<'_>],
    negatives: &[&Image],
    config: DetectConfig,
    hs: &HsParams,
    extra_seeds: &[Vec<f64>],
) -> Result<JointOutcome> {
    let table = score_table(mixture, config, positives, negatives)?;
    let outcome = optimize_joint_biases(&table, hs, extra_seeds)?;
    info!(
        "joint F1 {:.4} (independent {:.4}) over {} positives and {} negative images",
        outcome.f1,
        outcome.independent_f1,
        table.positives().len(),
        negatives.len()
    );
    mixture.set_biases(&outcome.biases)?;
    Ok(outcome)
}

/// Extra joint-search seeds for an adapted mixture: the old biases kept
/// with the new components at `new_biases`, and the old components
/// switched off with the new ones at `new_biases`.
pub fn adaptation_seeds(old: &[f64], new_biases: &[f64], off: f64) -> Vec<Vec<f64>> {
    let keep: Vec<f64> = old.iter().chain(new_biases).copied().collect();
    let disable: Vec<f64> = old.iter().map(|_| off).chain(new_biases.iter().copied()).collect();
    vec![keep, disable]
}

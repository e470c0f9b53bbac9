//! Closed-form LDA learning of template mixtures.
//!
//! Positive samples are first split by aspect ratio, each aspect cluster is
//! given a template size, and its samples are split again by k-means on
//! whitened HOG features. Every final cluster yields one component with
//! `w = (Σ + λI)⁻¹ (μ_pos − μ_neg)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::background::{assemble_covariance, AssembledCovariance, BackgroundStats, DEFAULT_LAMBDA};
use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::hog::compute_cell_grid;
use crate::image::Image;
use crate::kmeans::{kmeans, merge_small_clusters, DEFAULT_MAX_ITERATIONS};
use crate::linalg::{dot, max_abs};
use crate::mixture::{Component, Mixture, Provenance};

/// Relative residual bound every component solve must meet.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LearnParams {
    pub k_ar: usize,
    pub k_who: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Add horizontally mirrored crops to every cluster mean.
    pub mirror: bool,
    pub min_cluster_size: usize,
    pub max_area_cells: usize,
    pub min_template: usize,
    pub max_template: usize,
    pub max_dimension: usize,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            k_ar: 2,
            k_who: 2,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            mirror: true,
            min_cluster_size: 2,
            max_area_cells: 40,
            min_template: 4,
            max_template: 15,
            max_dimension: crate::background::DEFAULT_MAX_DIMENSION,
        }
    }
}

/// An annotated object: the image it appears in and its pixel box.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub image: &'a Image,
    pub bbox: BBox,
}

impl<'a> Sample<'a> {
    pub fn new(image: &'a Image, bbox: BBox) -> Result<Self> {
        let inside = bbox.x >= 0.0
            && bbox.y >= 0.0
            && bbox.right() <= image.width() as f64
            && bbox.bottom() <= image.height() as f64;
        if !(bbox.w > 0.0 && bbox.h > 0.0) || !inside {
            return Err(Error::Data(format!(
                "box {bbox:?} is empty or outside the {}x{} image",
                image.width(),
                image.height()
            )));
        }
        Ok(Sample { image, bbox })
    }

    pub fn log_aspect(&self) -> f64 {
        libm::log(self.bbox.w / self.bbox.h)
    }
}

/// Positive samples assigned to one component.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the sample list given to the learner.
    pub members: Vec<usize>,
    pub template_rows: usize,
    pub template_cols: usize,
    /// Mean of all member feature vectors, mirrored ones included.
    pub mean_pos: Vec<f64>,
    pub who_centroid: Vec<f64>,
    /// Feature vector of each member, aligned with `members`.
    pub features: Vec<Vec<f64>>,
    /// Mirrored feature vectors (empty when mirroring is off).
    pub mirrored: Vec<Vec<f64>>,
}

impl Cluster {
    fn vector_count(&self) -> usize {
        self.features.len() + self.mirrored.len()
    }
}

/// Leave-one-out positive scores of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct LooScores {
    pub scores: Vec<f64>,
    /// A single-member cluster cannot leave anything out; its plain score is
    /// reported instead.
    pub degenerate: bool,
}

/// Aspect-ratio clustering: k-means on `log(w/h)`. Returns one compact
/// cluster id per sample.
pub fn cluster_by_aspect(samples: &[Sample<'_>], k_ar: usize, seed: u64) -> Result<Vec<usize>> {
    let ratios: Vec<f64> = samples.iter().map(Sample::log_aspect).collect();
    cluster_log_ratios(&ratios, k_ar, seed)
}

pub fn cluster_log_ratios(log_ratios: &[f64], k_ar: usize, seed: u64) -> Result<Vec<usize>> {
    if k_ar == 0 {
        return Err(Error::Cluster("k_ar must be at least 1".into()));
    }
    if log_ratios.len() < k_ar {
        return Err(Error::Cluster(format!(
            "{} samples cannot form {k_ar} aspect clusters",
            log_ratios.len()
        )));
    }
    let points: Vec<Vec<f64>> = log_ratios.iter().map(|&r| vec![r]).collect();
    Ok(kmeans(&points, k_ar, seed, DEFAULT_MAX_ITERATIONS).assignments)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Template size for a cluster: median aspect ratio, median box area in
/// cells capped at `max_area_cells`, each side clamped to
/// `[min_template, max_template]`.
pub fn choose_template_size(boxes: &[BBox], cell_size: usize, params: &LearnParams) -> (usize, usize) {
    assert!(!boxes.is_empty(), "template size of an empty cluster");
    let mut logs: Vec<f64> = boxes.iter().map(|b| libm::log(b.w / b.h)).collect();
    let ratio = libm::exp(median(&mut logs));
    let cell_area = (cell_size * cell_size) as f64;
    let mut areas: Vec<f64> = boxes.iter().map(|b| b.area() / cell_area).collect();
    let area = median(&mut areas).min(params.max_area_cells as f64);
    let rows = libm::floor(libm::sqrt(area / ratio)) as usize;
    let cols = libm::floor(libm::sqrt(area * ratio)) as usize;
    let lo = params.min_template.max(1);
    let hi = params.max_template.max(lo);
    (rows.clamp(lo, hi), cols.clamp(lo, hi))
}

/// HOG features of a sample at a fixed template size. The box is cropped
/// with one cell of context on every side, resampled to
/// `(cols + 2) × (rows + 2)` cells so that the trimmed grid covers the box
/// exactly.
pub fn extract_features(sample: &Sample<'_>, rows: usize, cols: usize, cell_size: usize, mirror: bool) -> Result<Vec<f64>> {
    let b = sample.bbox;
    let pad_x = b.w / cols as f64;
    let pad_y = b.h / rows as f64;
    let crop = sample.image.crop_resize(
        b.x - pad_x,
        b.y - pad_y,
        b.w + 2.0 * pad_x,
        b.h + 2.0 * pad_y,
        (cols + 2) * cell_size,
        (rows + 2) * cell_size,
    )?;
    let crop = if mirror { crop.flip_horizontal() } else { crop };
    let grid = compute_cell_grid(&crop, cell_size)?;
    debug_assert_eq!((grid.rows(), grid.cols()), (rows, cols));
    Ok(grid.values().to_vec())
}

/// `L⁻¹ (x − μ̃)` with `Σ + λI = L Lᵀ`.
pub fn whiten(cov: &AssembledCovariance, mean_neg: &[f64], x: &[f64]) -> Vec<f64> {
    let centered: Vec<f64> = x.iter().zip(mean_neg).map(|(a, b)| a - b).collect();
    cov.factor().forward(&centered)
}

/// Result of WHO clustering: compact cluster id per sample and the
/// centroids in whitened space.
#[derive(Debug, Clone, PartialEq)]
pub struct WhoClusters {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss_trace: Vec<f64>,
}

/// k-means on whitened feature vectors that share one template size.
/// `k_who` is clamped to the number of samples; clusters smaller than
/// `min_cluster_size` are merged into their nearest neighbor.
pub fn cluster_whitened(
    features: &[Vec<f64>],
    cov: &AssembledCovariance,
    mean_neg: &[f64],
    k_who: usize,
    seed: u64,
    min_cluster_size: usize,
) -> Result<WhoClusters> {
    if k_who == 0 {
        return Err(Error::Cluster("k_who must be at least 1".into()));
    }
    if features.is_empty() {
        return Err(Error::Cluster("no samples to cluster".into()));
    }
    let whitened: Vec<Vec<f64>> = features.iter().map(|x| whiten(cov, mean_neg, x)).collect();
    let mut km = kmeans(&whitened, k_who.min(features.len()), seed, DEFAULT_MAX_ITERATIONS);
    merge_small_clusters(&whitened, &mut km, min_cluster_size);
    Ok(WhoClusters { assignments: km.assignments, centroids: km.centroids, wcss_trace: km.wcss_trace })
}

/// [`cluster_whitened`] with the covariance assembled from `stats`.
pub fn cluster_by_who(
    features: &[Vec<f64>],
    rows: usize,
    cols: usize,
    stats: &BackgroundStats,
    params: &LearnParams,
    k_who: usize,
    seed: u64,
) -> Result<WhoClusters> {
    if !stats.is_finalized() {
        return Err(Error::Config("background statistics are not finalized".into()));
    }
    let cov = assemble_covariance(stats, rows, cols, params.lambda, params.max_dimension)?;
    let mean = stats.tiled_mean(rows, cols)?;
    cluster_whitened(features, &cov, &mean, k_who, seed, params.min_cluster_size)
}

/// Solve `(Σ + λI) w = rhs`, with one step of iterative refinement if the
/// first solve misses the residual bound.
pub fn solve_checked(cov: &AssembledCovariance, rhs: &[f64]) -> Result<Vec<f64>> {
    let scale = max_abs(rhs);
    let mut w = cov.solve(rhs);
    for attempt in 0..2 {
        let r: Vec<f64> = cov.matrix().mul_vec(&w).iter().zip(rhs).map(|(a, b)| a - b).collect();
        let res = max_abs(&r);
        if res <= RESIDUAL_TOLERANCE * scale {
            return Ok(w);
        }
        if attempt == 0 {
            let dw = cov.solve(&r);
            for (wi, d) in w.iter_mut().zip(dw) {
                *wi -= d;
            }
        } else {
            return Err(Error::Numerical(format!(
                "solve residual {res:e} exceeds {:e}",
                RESIDUAL_TOLERANCE * scale
            )));
        }
    }
    unreachable!()
}

fn mean_of<'v>(vectors: impl Iterator<Item = &'v Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        n += 1;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    sum.into_iter().map(|s| s / n as f64).collect()
}

/// Learn the component of one cluster; its bias starts at 0.
pub fn learn_component(
    cluster: &Cluster,
    cov: &AssembledCovariance,
    mean_neg: &[f64],
    provenance: Provenance,
) -> Result<Component> {
    if cluster.features.is_empty() {
        return Err(Error::Cluster("cannot learn from an empty cluster".into()));
    }
    let rhs: Vec<f64> = cluster.mean_pos.iter().zip(mean_neg).map(|(p, n)| p - n).collect();
    let w = solve_checked(cov, &rhs)?;
    Component::new(cluster.template_rows, cluster.template_cols, w, provenance, cluster.members.len())
}

/// For every member, the score `w⁽⁻ⁱ⁾ᵀ xᵢ` of the model learned without it
/// (its mirrored copy is left out as well).
pub fn loo_positive_scores(cluster: &Cluster, cov: &AssembledCovariance, mean_neg: &[f64]) -> Result<LooScores> {
    let n = cluster.features.len();
    if n == 0 {
        return Err(Error::Cluster("cannot score an empty cluster".into()));
    }
    if n == 1 {
        let rhs: Vec<f64> = cluster.mean_pos.iter().zip(mean_neg).map(|(p, q)| p - q).collect();
        let w = solve_checked(cov, &rhs)?;
        return Ok(LooScores { scores: vec![dot(&w, &cluster.features[0])], degenerate: true });
    }
    let total = cluster.vector_count() as f64;
    let per_member = if cluster.mirrored.is_empty() { 1.0 } else { 2.0 };
    let sum: Vec<f64> = cluster.mean_pos.iter().map(|m| m * total).collect();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let x = &cluster.features[i];
        let rhs: Vec<f64> = (0..sum.len())
            .map(|k| {
                let mut s = sum[k] - x[k];
                if let Some(m) = cluster.mirrored.get(i) {
                    s -= m[k];
                }
                s / (total - per_member) - mean_neg[k]
            })
            .collect();
        let w = cov.solve(&rhs);
        scores.push(dot(&w, x));
    }
    Ok(LooScores { scores, degenerate: false })
}

/// Assembled covariances keyed by template size.
pub struct CovarianceCache<'s> {
    stats: &'s BackgroundStats,
    lambda: f64,
    max_dimension: usize,
    entries: BTreeMap<(usize, usize), AssembledCovariance>,
}

impl<'s> CovarianceCache<'s> {
    pub fn new(stats: &'s BackgroundStats, lambda: f64, max_dimension: usize) -> Self {
        CovarianceCache { stats, lambda, max_dimension, entries: BTreeMap::new() }
    }

    pub fn get(&mut self, rows: usize, cols: usize) -> Result<&AssembledCovariance> {
        if !self.entries.contains_key(&(rows, cols)) {
            let cov = assemble_covariance(self.stats, rows, cols, self.lambda, self.max_dimension)?;
            self.entries.insert((rows, cols), cov);
        }
        Ok(&self.entries[&(rows, cols)])
    }
}

/// Everything produced while learning a mixture.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub mixture: Mixture,
    /// One cluster per component, in component order.
    pub clusters: Vec<Cluster>,
    /// Leave-one-out scores per component, aligned with cluster members.
    pub loo: Vec<LooScores>,
}

impl LearnOutcome {
    /// Component and leave-one-out score of input sample `index`, when the
    /// sample's cluster was large enough for a true leave-one-out score.
    pub fn loo_for_sample(&self, index: usize) -> Option<(usize, f64)> {
        for (k, (cluster, loo)) in self.clusters.iter().zip(&self.loo).enumerate() {
            if loo.degenerate {
                continue;
            }
            if let Some(pos) = cluster.members.iter().position(|&m| m == index) {
                return Some((k, loo.scores[pos]));
            }
        }
        None
    }
}

/// Learn a mixture: aspect clustering, template sizing, WHO clustering and
/// one LDA component per final cluster.
pub fn learn_mixture(
    class_name: &str,
    samples: &[Sample<'_>],
    stats: &BackgroundStats,
    params: &LearnParams,
    provenance: Provenance,
) -> Result<LearnOutcome> {
    if samples.is_empty() {
        return Err(Error::Cluster("no positive samples".into()));
    }
    if !stats.is_finalized() {
        return Err(Error::Config("background statistics are not finalized".into()));
    }
    let cell_size = stats.config().cell_size;
    let aspect = cluster_by_aspect(samples, params.k_ar, params.seed)?;
    let aspect_count = aspect.iter().max().map_or(0, |m| m + 1);

    let mut cache = CovarianceCache::new(stats, params.lambda, params.max_dimension);
    let mut clusters = Vec::new();
    for a in 0..aspect_count {
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| aspect[i] == a).collect();
        if idx.is_empty() {
            continue;
        }
        let boxes: Vec<BBox> = idx.iter().map(|&i| samples[i].bbox).collect();
        let (rows, cols) = choose_template_size(&boxes, cell_size, params);
        let features = idx
            .iter()
            .map(|&i| extract_features(&samples[i], rows, cols, cell_size, false))
            .collect::<Result<Vec<_>>>()?;
        let mirrored = if params.mirror {
            idx.iter()
                .map(|&i| extract_features(&samples[i], rows, cols, cell_size, true))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mean_neg = stats.tiled_mean(rows, cols)?;
        let cov = cache.get(rows, cols)?;
        let seed = params.seed.wrapping_add(a as u64 + 1);
        let who = cluster_whitened(&features, cov, &mean_neg, params.k_who, seed, params.min_cluster_size)?;
        for (c, centroid) in who.centroids.iter().enumerate() {
            let local: Vec<usize> = (0..idx.len()).filter(|&j| who.assignments[j] == c).collect();
            if local.is_empty() {
                continue;
            }
            let feats: Vec<Vec<f64>> = local.iter().map(|&j| features[j].clone()).collect();
            let mirr: Vec<Vec<f64>> = if params.mirror {
                local.iter().map(|&j| mirrored[j].clone()).collect()
            } else {
                Vec::new()
            };
            let mean_pos = mean_of(feats.iter().chain(mirr.iter()), rows * cols * crate::hog::HOG_CHANNELS);
            clusters.push(Cluster {
                members: local.iter().map(|&j| idx[j]).collect(),
                template_rows: rows,
                template_cols: cols,
                mean_pos,
                who_centroid: centroid.clone(),
                features: feats,
                mirrored: mirr,
            });
        }
    }
    if clusters.is_empty() {
        return Err(Error::Cluster("every cluster was dropped".into()));
    }

    let mut components = Vec::with_capacity(clusters.len());
    let mut loo = Vec::with_capacity(clusters.len());
    for cluster in &clusters {
        let mean_neg = stats.tiled_mean(cluster.template_rows, cluster.template_cols)?;
        let cov = cache.get(cluster.template_rows, cluster.template_cols)?;
        components.push(learn_component(cluster, cov, &mean_neg, provenance)?);
        loo.push(loo_positive_scores(cluster, cov, &mean_neg)?);
    }
    let mixture = Mixture {
        class_name: String::from(class_name),
        cell_size,
        components,
        params: params.clone(),
        biases_stale: true,
    };
    Ok(LearnOutcome { mixture, clusters, loo })
}

/// Learn in-situ components from `samples` and append them to `base`.
/// The returned outcome's clusters and leave-one-out scores describe only
/// the new components, which start at index `base.len()`.
pub fn adapt_mixture(
    base: &Mixture,
    samples: &[Sample<'_>],
    stats: &BackgroundStats,
    params: &LearnParams,
) -> Result<LearnOutcome> {
    if samples.is_empty() {
        return Err(Error::Data("adaptation needs at least one sample".into()));
    }
    if stats.config().cell_size != base.cell_size {
        return Err(Error::Config(format!(
            "statistics use {}px cells but the model uses {}px",
            stats.config().cell_size,
            base.cell_size
        )));
    }
    let learned = learn_mixture(&base.class_name, samples, stats, params, Provenance::InSitu)?;
    let mixture = base.append(learned.mixture.components);
    Ok(LearnOutcome { mixture, clusters: learned.clusters, loo: learned.loo })
}

//! Template scoring over feature pyramids, mixture detection and
//! non-maximum suppression.
//!
//! The FFT path computes, for every level, the cross-correlation of the
//! 31-channel level with each template through the convolution theorem:
//! both are zero-padded to a {2,3,5}-smooth size at least as large as the
//! level, transformed, multiplied pointwise (template conjugated) and
//! summed over channels, and a single inverse transform yields the scores.
//! Two real channels share one complex transform.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fft::{next_smooth_size, Complex64, Fft2d, FftPlanner};
use crate::geom::BBox;
use crate::hog::{build_pyramid, CellGrid, FeaturePyramid, DEFAULT_INTERVAL, HOG_CHANNELS};
use crate::image::Image;
use crate::mixture::{Mixture, TemplateView};

const C: usize = HOG_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectConfig {
    pub interval: usize,
    pub nms_overlap: f64,
    pub max_detections: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { interval: DEFAULT_INTERVAL, nms_overlap: 0.5, max_detections: 100 }
    }
}

/// Raw template responses at every valid placement on one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
    pub level_index: usize,
    pub component_index: usize,
}

impl ScoreMap {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.cols + c]
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub bbox: BBox,
    /// Raw score minus the component bias.
    pub score: f64,
    pub component_index: usize,
    pub level_index: usize,
}

fn check_sizes(level: &CellGrid, t: &TemplateView<'_>) -> Result<(usize, usize)> {
    if t.rows > level.rows() || t.cols > level.cols() {
        return Err(Error::Size(format!(
            "{}x{} template does not fit a {}x{} level",
            t.rows,
            t.cols,
            level.rows(),
            level.cols()
        )));
    }
    Ok((level.rows() - t.rows + 1, level.cols() - t.cols + 1))
}

/// Direct cross-correlation: `scores[r][c] = Σ w · x` over the template
/// placed with its top-left cell at `(r, c)`.
pub fn convolve_spatial(level: &CellGrid, template: TemplateView<'_>) -> Result<ScoreMap> {
    let (rows, cols) = check_sizes(level, &template)?;
    let mut scores = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for i in 0..template.rows {
                let w = &template.weights[i * template.cols * C..(i + 1) * template.cols * C];
                let start = ((r + i) * level.cols() + c) * C;
                let x = &level.values()[start..start + template.cols * C];
                acc += crate::linalg::dot(w, x);
            }
            scores[r * cols + c] = acc;
        }
    }
    Ok(ScoreMap { rows, cols, scores, level_index: 0, component_index: 0 })
}

/// Spectra of a zero-padded `rows × cols × 31` tensor, channels packed in
/// pairs as `x[2k] + i·x[2k+1]`.
fn spectra(values: &[f64], rows: usize, cols: usize, fft: &Fft2d) -> Vec<Vec<Complex64>> {
    let (nr, nc) = (fft.rows(), fft.cols());
    let zero = Complex64::new(0.0, 0.0);
    (0..C)
        .step_by(2)
        .map(|first| {
            let mut buf = vec![zero; nr * nc];
            for r in 0..rows {
                for c in 0..cols {
                    let cell = &values[(r * cols + c) * C..][..C];
                    let im = if first + 1 < C { cell[first + 1] } else { 0.0 };
                    buf[r * nc + c] = Complex64::new(cell[first], im);
                }
            }
            fft.forward_leading_rows(&mut buf, rows);
            buf
        })
        .collect()
}

/// Frequency-domain form of one level, reusable across templates.
pub struct LevelSpectrum {
    fft: Fft2d,
    level_rows: usize,
    level_cols: usize,
    channels: Vec<Vec<Complex64>>,
}

impl LevelSpectrum {
    pub fn new(level: &CellGrid, planner: &mut FftPlanner) -> Self {
        let fft = Fft2d::new(planner, next_smooth_size(level.rows()), next_smooth_size(level.cols()));
        let channels = spectra(level.values(), level.rows(), level.cols(), &fft);
        LevelSpectrum { fft, level_rows: level.rows(), level_cols: level.cols(), channels }
    }

    /// Transform size `(rows, cols)`.
    pub fn size(&self) -> (usize, usize) {
        (self.fft.rows(), self.fft.cols())
    }

    pub fn template_spectrum(&self, template: TemplateView<'_>) -> Vec<Vec<Complex64>> {
        spectra(template.weights, template.rows, template.cols, &self.fft)
    }

    /// Scores of a template whose spectrum was computed at this size.
    pub fn correlate(&self, rows: usize, cols: usize, template: &[Vec<Complex64>]) -> Result<ScoreMap> {
        if rows > self.level_rows || cols > self.level_cols {
            return Err(Error::Size(format!(
                "{rows}x{cols} template does not fit a {}x{} level",
                self.level_rows, self.level_cols
            )));
        }
        let (nr, nc) = self.size();
        let mut acc = vec![Complex64::new(0.0, 0.0); nr * nc];
        for (x, w) in self.channels.iter().zip(template) {
            for ((a, xv), wv) in acc.iter_mut().zip(x).zip(w) {
                *a += xv * wv.conj();
            }
        }
        self.fft.inverse(&mut acc);
        let norm = 1.0 / (nr * nc) as f64;
        let out_rows = self.level_rows - rows + 1;
        let out_cols = self.level_cols - cols + 1;
        let mut scores = Vec::with_capacity(out_rows * out_cols);
        for r in 0..out_rows {
            for c in 0..out_cols {
                scores.push(acc[r * nc + c].re * norm);
            }
        }
        Ok(ScoreMap { rows: out_rows, cols: out_cols, scores, level_index: 0, component_index: 0 })
    }
}

/// FFT cross-correlation; agrees with [`convolve_spatial`] to rounding.
pub fn convolve_fft(level: &CellGrid, template: TemplateView<'_>) -> Result<ScoreMap> {
    convolve_fft_with(level, template, &mut FftPlanner::new())
}

pub fn convolve_fft_with(level: &CellGrid, template: TemplateView<'_>, planner: &mut FftPlanner) -> Result<ScoreMap> {
    check_sizes(level, &template)?;
    let spectrum = LevelSpectrum::new(level, planner);
    let t = spectrum.template_spectrum(template);
    spectrum.correlate(template.rows, template.cols, &t)
}

/// Total order used by NMS: score descending, then box, component and
/// level ascending.
fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.lex_cmp(&b.bbox))
        .then(a.component_index.cmp(&b.component_index))
        .then(a.level_index.cmp(&b.level_index))
}

/// Greedy non-maximum suppression: keep the best remaining candidate and
/// drop every candidate overlapping it by IoU > `overlap`.
pub fn nms(mut candidates: Vec<Detection>, overlap: f64) -> Vec<Detection> {
    candidates.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::new();
    'next: for d in candidates {
        for k in &kept {
            if k.bbox.iou(&d.bbox) > overlap {
                continue 'next;
            }
        }
        kept.push(d);
    }
    kept
}

/// One scored template placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub bbox: BBox,
    pub raw: f64,
    pub component_index: usize,
    pub level_index: usize,
}

/// Mixture detector with cached FFT plans and template spectra. Reuse one
/// detector across images of similar size to amortize the caches.
pub struct Detector<'m> {
    mixture: &'m Mixture,
    config: DetectConfig,
    planner: FftPlanner,
    templates: BTreeMap<(usize, usize, usize), Vec<Vec<Complex64>>>,
}

impl<'m> Detector<'m> {
    pub fn new(mixture: &'m Mixture, config: DetectConfig) -> Result<Self> {
        if mixture.is_empty() {
            return Err(Error::Data("mixture has no components".into()));
        }
        if config.interval == 0 {
            return Err(Error::Config("pyramid interval must be at least 1".into()));
        }
        if !(config.nms_overlap > 0.0 && config.nms_overlap < 1.0) {
            return Err(Error::Config(format!("NMS overlap must lie in (0, 1), got {}", config.nms_overlap)));
        }
        Ok(Detector { mixture, config, planner: FftPlanner::new(), templates: BTreeMap::new() })
    }

    pub fn mixture(&self) -> &Mixture {
        self.mixture
    }

    pub fn config(&self) -> DetectConfig {
        self.config
    }

    /// Pyramid for `image`, or `None` when it cannot hold any template.
    pub fn pyramid(&self, image: &Image) -> Result<Option<FeaturePyramid>> {
        match build_pyramid(image, self.mixture.cell_size, self.config.interval, self.mixture.min_template()) {
            Ok(p) => Ok(Some(p)),
            Err(Error::Size(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Score maps for every (level, component) pair where the template fits.
    pub fn score_maps(&mut self, pyramid: &FeaturePyramid) -> Vec<ScoreMap> {
        let mut maps = Vec::new();
        for (li, level) in pyramid.levels().iter().enumerate() {
            let fits: Vec<usize> = (0..self.mixture.len())
                .filter(|&k| {
                    let c = &self.mixture.components[k];
                    c.rows <= level.rows() && c.cols <= level.cols()
                })
                .collect();
            if fits.is_empty() {
                continue;
            }
            let spectrum = LevelSpectrum::new(level, &mut self.planner);
            let (nr, nc) = spectrum.size();
            for k in fits {
                let comp = &self.mixture.components[k];
                let spec = self
                    .templates
                    .entry((k, nr, nc))
                    .or_insert_with(|| spectrum.template_spectrum(comp.template()));
                let mut map = spectrum.correlate(comp.rows, comp.cols, spec).expect("template fits the level");
                map.level_index = li;
                map.component_index = k;
                maps.push(map);
            }
        }
        maps
    }

    /// Pixel box of placement `(row, col)` in `map`, clipped to the image.
    pub fn window_box(&self, pyramid: &FeaturePyramid, map: &ScoreMap, row: usize, col: usize) -> BBox {
        let level = &pyramid.levels()[map.level_index];
        let comp = &self.mixture.components[map.component_index];
        let unit = pyramid.cell_size() as f64 / level.scale();
        // +1 for the trimmed border cell.
        BBox::new(
            (col + 1) as f64 * unit,
            (row + 1) as f64 * unit,
            comp.cols as f64 * unit,
            comp.rows as f64 * unit,
        )
        .clamp_to(pyramid.image_width() as f64, pyramid.image_height() as f64)
    }

    /// Every placement of every component with its raw score.
    pub fn windows(&mut self, image: &Image) -> Result<Vec<Window>> {
        let Some(pyramid) = self.pyramid(image)? else {
            return Ok(Vec::new());
        };
        let maps = self.score_maps(&pyramid);
        let mut out = Vec::new();
        for map in &maps {
            for r in 0..map.rows {
                for c in 0..map.cols {
                    out.push(Window {
                        bbox: self.window_box(&pyramid, map, r, c),
                        raw: map.get(r, c),
                        component_index: map.component_index,
                        level_index: map.level_index,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Candidates with `raw − bias ≥ 0` before suppression.
    pub fn candidates(&mut self, image: &Image) -> Result<Vec<Detection>> {
        let Some(pyramid) = self.pyramid(image)? else {
            return Ok(Vec::new());
        };
        let maps = self.score_maps(&pyramid);
        let mut out = Vec::new();
        for map in &maps {
            let bias = self.mixture.components[map.component_index].bias;
            for r in 0..map.rows {
                for c in 0..map.cols {
                    let score = map.get(r, c) - bias;
                    if score >= 0.0 {
                        out.push(Detection {
                            bbox: self.window_box(&pyramid, map, r, c),
                            score,
                            component_index: map.component_index,
                            level_index: map.level_index,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Thresholded, suppressed detections sorted by descending score.
    pub fn detect(&mut self, image: &Image) -> Result<Vec<Detection>> {
        let candidates = self.candidates(image)?;
        let mut kept = nms(candidates, self.config.nms_overlap);
        kept.truncate(self.config.max_detections);
        Ok(kept)
    }
}

/// One-shot detection with a fresh [`Detector`].
pub fn detect(image: &Image, mixture: &Mixture, config: DetectConfig) -> Result<Vec<Detection>> {
    Detector::new(mixture, config)?.detect(image)
}

//! 31-channel HOG cell descriptors and multi-scale feature pyramids.
//!
//! Each cell holds 18 contrast-sensitive orientation bins, 9
//! contrast-insensitive bins and 4 gradient-energy features, one per 2×2
//! normalization block touching the cell. Cells on the image border have
//! incomplete normalization neighborhoods and are trimmed, so an image of
//! `R × C` cells yields an `(R − 2) × (C − 2)` grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::Image;

pub const HOG_CHANNELS: usize = 31;
pub const SENSITIVE_BINS: usize = 18;
pub const INSENSITIVE_BINS: usize = 9;
/// First contrast-insensitive channel.
pub const INSENSITIVE_OFFSET: usize = 18;
/// First gradient-energy channel.
pub const ENERGY_OFFSET: usize = 27;

pub const DEFAULT_CELL_SIZE: usize = 8;
pub const DEFAULT_INTERVAL: usize = 5;
pub const TRUNCATION: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-9;
const ENERGY_SCALE: f64 = 0.2357;

/// Grid of HOG cells, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    rows: usize,
    cols: usize,
    cell_size: usize,
    scale: f64,
    values: Vec<f64>,
}

impl CellGrid {
    pub fn new(rows: usize, cols: usize, cell_size: usize, scale: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols * HOG_CHANNELS {
            return Err(Error::Size(format!(
                "{rows}x{cols} grid needs {} values, got {}",
                rows * cols * HOG_CHANNELS,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("cell grid values must be finite".into()));
        }
        Ok(CellGrid { rows, cols, cell_size, scale, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    /// Ratio of this level's resolution to the source image.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * HOG_CHANNELS;
        &self.values[start..start + HOG_CHANNELS]
    }

    /// `rows × cols` window starting at `(row, col)`, flattened in grid order.
    pub fn window(&self, row: usize, col: usize, rows: usize, cols: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * cols * HOG_CHANNELS);
        for r in row..row + rows {
            let start = (r * self.cols + col) * HOG_CHANNELS;
            out.extend_from_slice(&self.values[start..start + cols * HOG_CHANNELS]);
        }
        out
    }
}

/// Compute the interior HOG grid of `image`.
pub fn compute_cell_grid(image: &Image, cell_size: usize) -> Result<CellGrid> {
    compute_scaled(image, cell_size, 1.0)
}

fn compute_scaled(image: &Image, cell_size: usize, scale: f64) -> Result<CellGrid> {
    if cell_size == 0 {
        return Err(Error::Config("cell size must be positive".into()));
    }
    let (width, height) = (image.width(), image.height());
    let cells_x = width / cell_size;
    let cells_y = height / cell_size;
    if cells_x < 3 || cells_y < 3 {
        return Err(Error::Size(format!(
            "{width}x{height} image has {cells_x}x{cells_y} cells of {cell_size}px; at least 3x3 are needed"
        )));
    }

    let hist = orientation_histograms(image, cell_size, cells_x, cells_y);

    let mut energy = vec![0.0; cells_x * cells_y];
    for (e, h) in energy.iter_mut().zip(hist.chunks_exact(SENSITIVE_BINS)) {
        *e = (0..INSENSITIVE_BINS).map(|o| {
            let v = h[o] + h[o + INSENSITIVE_BINS];
            v * v
        })
        .sum();
    }
    let block = |y: usize, x: usize| -> f64 {
        let s = energy[y * cells_x + x]
            + energy[y * cells_x + x + 1]
            + energy[(y + 1) * cells_x + x]
            + energy[(y + 1) * cells_x + x + 1];
        1.0 / libm::sqrt(s + NORM_EPS)
    };

    let rows = cells_y - 2;
    let cols = cells_x - 2;
    let mut values = vec![0.0; rows * cols * HOG_CHANNELS];
    for r in 0..rows {
        for c in 0..cols {
            let (cy, cx) = (r + 1, c + 1);
            // The four 2x2 blocks containing the cell, ordered by their
            // top-left corner relative to it: (0,0), (-1,0), (0,-1), (-1,-1).
            let norms = [block(cy, cx), block(cy - 1, cx), block(cy, cx - 1), block(cy - 1, cx - 1)];
            let h = &hist[(cy * cells_x + cx) * SENSITIVE_BINS..][..SENSITIVE_BINS];
            let out = &mut values[(r * cols + c) * HOG_CHANNELS..][..HOG_CHANNELS];
            let mut texture = [0.0; 4];
            for o in 0..SENSITIVE_BINS {
                let mut acc = 0.0;
                for (t, n) in texture.iter_mut().zip(norms) {
                    let v = (h[o] * n).min(TRUNCATION);
                    acc += v;
                    *t += v;
                }
                out[o] = 0.5 * acc;
            }
            for o in 0..INSENSITIVE_BINS {
                let s = h[o] + h[o + INSENSITIVE_BINS];
                let acc: f64 = norms.iter().map(|n| (s * n).min(TRUNCATION)).sum();
                out[INSENSITIVE_OFFSET + o] = 0.5 * acc;
            }
            for (i, t) in texture.iter().enumerate() {
                out[ENERGY_OFFSET + i] = ENERGY_SCALE * t;
            }
        }
    }
    CellGrid::new(rows, cols, cell_size, scale, values)
}

/// Per-cell 18-bin gradient histograms over all `cells_y × cells_x` cells,
/// with bilinear interpolation in space and linear interpolation between
/// neighboring orientation bins.
fn orientation_histograms(image: &Image, cell_size: usize, cells_x: usize, cells_y: usize) -> Vec<f64> {
    let mut hist = vec![0.0; cells_x * cells_y * SENSITIVE_BINS];
    let visible_w = cells_x * cell_size;
    let visible_h = cells_y * cell_size;
    let cs = cell_size as f64;
    let channels = image.channels();
    for y in 1..visible_h - 1 {
        for x in 1..visible_w - 1 {
            // Gradient of the channel with the largest magnitude.
            let (mut dx, mut dy, mut best) = (0.0, 0.0, 0.0);
            for ch in 0..channels {
                let gx = image.get(x + 1, y, ch) - image.get(x - 1, y, ch);
                let gy = image.get(x, y + 1, ch) - image.get(x, y - 1, ch);
                let v = gx * gx + gy * gy;
                if v > best {
                    best = v;
                    dx = gx;
                    dy = gy;
                }
            }
            if best == 0.0 {
                continue;
            }
            let magnitude = libm::sqrt(best);
            let mut angle = libm::atan2(dy, dx);
            if angle < 0.0 {
                angle += 2.0 * PI;
            }
            let pos = angle / (2.0 * PI) * SENSITIVE_BINS as f64;
            let base = libm::floor(pos);
            let frac = pos - base;
            let b0 = (base as usize) % SENSITIVE_BINS;
            let b1 = (b0 + 1) % SENSITIVE_BINS;

            let xp = (x as f64 + 0.5) / cs - 0.5;
            let yp = (y as f64 + 0.5) / cs - 0.5;
            let ixp = libm::floor(xp);
            let iyp = libm::floor(yp);
            let vx0 = xp - ixp;
            let vy0 = yp - iyp;
            let (ixp, iyp) = (ixp as isize, iyp as isize);
            for (cy, wy) in [(iyp, 1.0 - vy0), (iyp + 1, vy0)] {
                if cy < 0 || cy >= cells_y as isize {
                    continue;
                }
                for (cx, wx) in [(ixp, 1.0 - vx0), (ixp + 1, vx0)] {
                    if cx < 0 || cx >= cells_x as isize {
                        continue;
                    }
                    let w = magnitude * wx * wy;
                    let h = &mut hist[(cy as usize * cells_x + cx as usize) * SENSITIVE_BINS..][..SENSITIVE_BINS];
                    h[b0] += w * (1.0 - frac);
                    h[b1] += w * frac;
                }
            }
        }
    }
    hist
}

/// Multi-scale stack of HOG grids, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<CellGrid>,
    interval: usize,
    cell_size: usize,
    image_width: usize,
    image_height: usize,
}

impl FeaturePyramid {
    pub fn levels(&self) -> &[CellGrid] {
        &self.levels
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn image_height(&self) -> usize {
        self.image_height
    }
}

/// Nominal scale of pyramid level `k`: `2^(−k / interval)`.
pub fn level_scale(k: usize, interval: usize) -> f64 {
    libm::pow(2.0, -(k as f64) / interval as f64)
}

/// Build a pyramid whose level `k` is the image rescaled by
/// `2^(−k / interval)`. Levels of the first octave are resampled
/// bilinearly from the source; every later level halves the level one
/// octave above it. Construction stops at the first level whose grid cannot
/// hold a `min_rows × min_cols` template.
pub fn build_pyramid(
    image: &Image,
    cell_size: usize,
    interval: usize,
    min_template: (usize, usize),
) -> Result<FeaturePyramid> {
    if interval == 0 {
        return Err(Error::Config("pyramid interval must be at least 1".into()));
    }
    let (min_rows, min_cols) = (min_template.0.max(1), min_template.1.max(1));
    let fits = |w: usize, h: usize| {
        let cx = w / cell_size;
        let cy = h / cell_size;
        cx >= 3 && cy >= 3 && cy - 2 >= min_rows && cx - 2 >= min_cols
    };
    let mut images: Vec<Image> = Vec::new();
    let mut levels = Vec::new();
    for k in 0.. {
        let scaled = if k < interval {
            let s = level_scale(k, interval);
            let w = libm::round(image.width() as f64 * s) as usize;
            let h = libm::round(image.height() as f64 * s) as usize;
            if !fits(w, h) {
                break;
            }
            if k == 0 {
                image.clone()
            } else {
                image.resize(w, h)?
            }
        } else {
            let above = &images[k - interval];
            if !fits(above.width() / 2, above.height() / 2) {
                break;
            }
            above.downsample2()?
        };
        levels.push(compute_scaled(&scaled, cell_size, level_scale(k, interval))?);
        images.push(scaled);
    }
    if levels.is_empty() {
        return Err(Error::Size(format!(
            "{}x{} image cannot hold a {min_rows}x{min_cols} template at cell size {cell_size}",
            image.width(),
            image.height()
        )));
    }
    Ok(FeaturePyramid {
        levels,
        interval,
        cell_size,
        image_width: image.width(),
        image_height: image.height(),
    })
}

pub const DEFAULT_GLYPH_PX: usize = 20;

/// Draw a template as per-cell oriented strokes. Each of the 9
/// contrast-insensitive bins becomes a line through the cell center,
/// perpendicular to the bin's gradient direction, with brightness
/// proportional to the positive part of its weight (normalized by the
/// largest positive weight in the template).
pub fn render_weight_glyph(weights: &[f64], rows: usize, cols: usize, glyph_px: usize) -> Result<Image> {
    if weights.len() != rows * cols * HOG_CHANNELS {
        return Err(Error::Size(format!(
            "{rows}x{cols} template needs {} weights, got {}",
            rows * cols * HOG_CHANNELS,
            weights.len()
        )));
    }
    if rows == 0 || cols == 0 || glyph_px == 0 {
        return Err(Error::Size("glyph needs a non-empty template and glyph size".into()));
    }
    let max_pos = (0..rows * cols)
        .flat_map(|cell| weights[cell * HOG_CHANNELS + INSENSITIVE_OFFSET..][..INSENSITIVE_BINS].iter())
        .fold(0.0_f64, |m, &w| m.max(w));
    let (out_w, out_h) = (cols * glyph_px, rows * glyph_px);
    let mut pixels = vec![0.0; out_w * out_h];
    if max_pos > 0.0 {
        let half = glyph_px as f64 / 2.0;
        for r in 0..rows {
            for c in 0..cols {
                let cell = &weights[(r * cols + c) * HOG_CHANNELS + INSENSITIVE_OFFSET..][..INSENSITIVE_BINS];
                for (o, &w) in cell.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    let value = w / max_pos;
                    let theta = o as f64 * PI / INSENSITIVE_BINS as f64;
                    // Stroke direction is the gradient direction turned by 90°.
                    let (ux, uy) = (-libm::sin(theta), libm::cos(theta));
                    for py in 0..glyph_px {
                        for px in 0..glyph_px {
                            let dx = px as f64 + 0.5 - half;
                            let dy = py as f64 + 0.5 - half;
                            let along = dx * ux + dy * uy;
                            let across = libm::fabs(dy * ux - dx * uy);
                            if across <= 0.7 && libm::fabs(along) <= half {
                                let p = &mut pixels[(r * glyph_px + py) * out_w + c * glyph_px + px];
                                *p = f64::max(*p, value);
                            }
                        }
                    }
                }
            }
        }
    }
    Image::new(out_w, out_h, 1, pixels)
}

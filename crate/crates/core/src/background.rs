//! Background (negative-class) statistics for whitening.
//!
//! HOG features of generic images are modeled as a stationary process: the
//! mean is the same at every cell, and the covariance between two cells
//! depends only on their offset. One pass over a corpus therefore produces
//! the covariance for every template size up to `max_offset + 1` cells.
//!
//! Offsets are stored for the half plane `dx ≥ 0`; blocks for `dx < 0` are
//! obtained from `Γ(−dx, −dy) = Γ(dx, dy)ᵀ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hog::{CellGrid, HOG_CHANNELS};
use crate::linalg::{Cholesky, Matrix};

const C: usize = HOG_CHANNELS;
const BLOCK: usize = C * C;

pub const DEFAULT_MAX_OFFSET: usize = 15;
pub const DEFAULT_LAMBDA: f64 = 0.01;
/// Largest covariance dimension `rows · cols · 31` assembled by default.
pub const DEFAULT_MAX_DIMENSION: usize = 64 * HOG_CHANNELS;
const LAMBDA_RETRIES: usize = 8;

/// Feature extraction settings the statistics were gathered with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureConfig {
    pub cell_size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { cell_size: crate::hog::DEFAULT_CELL_SIZE }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PairSums {
    count: u64,
    cross: Vec<f64>,
    first: [f64; C],
    second: [f64; C],
}

impl PairSums {
    fn new() -> Self {
        PairSums { count: 0, cross: vec![0.0; BLOCK], first: [0.0; C], second: [0.0; C] }
    }

    fn merge(&mut self, other: &PairSums) {
        self.count += other.count;
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
        for i in 0..C {
            self.first[i] += other.first[i];
            self.second[i] += other.second[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum State {
    Accumulating { sum: [f64; C], pairs: Vec<PairSums> },
    Finalized { mean: [f64; C], blocks: Vec<Vec<f64>> },
}

/// Mean and stationary autocorrelation of background HOG features.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundStats {
    config: FeatureConfig,
    max_offset: usize,
    cell_count: u64,
    state: State,
}

impl BackgroundStats {
    pub fn new(config: FeatureConfig, max_offset: usize) -> Self {
        let pairs = vec![PairSums::new(); offset_count(max_offset)];
        BackgroundStats {
            config,
            max_offset,
            cell_count: 0,
            state: State::Accumulating { sum: [0.0; C], pairs },
        }
    }

    /// Finalized statistics from their stored representation: the mean and
    /// one 31×31 row-major block per offset, for `dy` in `−max..=max`
    /// (outer) and `dx` in `0..=max` (inner).
    pub fn from_parts(
        config: FeatureConfig,
        max_offset: usize,
        cell_count: u64,
        mean: [f64; C],
        blocks: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if blocks.len() != offset_count(max_offset) || blocks.iter().any(|b| b.len() != BLOCK) {
            return Err(Error::Size(format!(
                "expected {} blocks of {BLOCK} values for max offset {max_offset}",
                offset_count(max_offset)
            )));
        }
        if cell_count == 0 {
            return Err(Error::EmptyStats);
        }
        if mean.iter().chain(blocks.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("background statistics must be finite".into()));
        }
        let mut stats = BackgroundStats { config, max_offset, cell_count, state: State::Finalized { mean, blocks } };
        stats.enforce_symmetry();
        Ok(stats)
    }

    pub fn config(&self) -> FeatureConfig {
        self.config
    }

    pub fn max_offset(&self) -> usize {
        self.max_offset
    }

    pub fn cell_count(&self) -> u64 {
        self.cell_count
    }

    pub fn is_finalized(&self) -> bool {
        matches!(self.state, State::Finalized { .. })
    }

    /// Per-channel background mean; `None` before finalize.
    pub fn mean(&self) -> Option<&[f64; C]> {
        match &self.state {
            State::Finalized { mean, .. } => Some(mean),
            State::Accumulating { .. } => None,
        }
    }

    /// Stored blocks in file order (see [`BackgroundStats::from_parts`]).
    pub fn stored_blocks(&self) -> Option<&[Vec<f64>]> {
        match &self.state {
            State::Finalized { blocks, .. } => Some(blocks),
            State::Accumulating { .. } => None,
        }
    }

    fn index(&self, dx: usize, dy: isize) -> usize {
        let m = self.max_offset;
        (dy + m as isize) as usize * (m + 1) + dx
    }

    /// Γ(dx, dy) = E[(x_p − μ)(x_{p+(dx,dy)} − μ)ᵀ] as a row-major 31×31
    /// block, or `None` when the offset exceeds `max_offset` or the stats
    /// are not finalized.
    pub fn block(&self, dx: isize, dy: isize) -> Option<Vec<f64>> {
        let State::Finalized { blocks, .. } = &self.state else {
            return None;
        };
        let m = self.max_offset as isize;
        if dx.abs() > m || dy.abs() > m {
            return None;
        }
        if dx >= 0 {
            Some(blocks[self.index(dx as usize, dy)].clone())
        } else {
            Some(transpose(&blocks[self.index((-dx) as usize, -dy)]))
        }
    }

    /// Add one grid's cells and cell pairs to the running sums.
    pub fn accumulate(&mut self, grid: &CellGrid) -> Result<()> {
        if grid.cell_size() != self.config.cell_size {
            return Err(Error::Config(format!(
                "grid cell size {} does not match statistics cell size {}",
                grid.cell_size(),
                self.config.cell_size
            )));
        }
        let need = 2 * self.max_offset + 1;
        if grid.rows() < need || grid.cols() < need {
            return Err(Error::Size(format!(
                "{}x{} grid is smaller than {need}x{need} required by max offset {}",
                grid.rows(),
                grid.cols(),
                self.max_offset
            )));
        }
        if self.is_finalized() {
            return Err(Error::Config("cannot accumulate into finalized statistics".into()));
        }
        let mut local = BackgroundStats::new(self.config, self.max_offset);
        local.add_grid(grid);
        self.merge(&local)
    }

    fn add_grid(&mut self, grid: &CellGrid) {
        let State::Accumulating { sum, pairs } = &mut self.state else {
            unreachable!("add_grid on finalized stats");
        };
        let (rows, cols) = (grid.rows(), grid.cols());
        for r in 0..rows {
            for c in 0..cols {
                for (s, v) in sum.iter_mut().zip(grid.cell(r, c)) {
                    *s += v;
                }
            }
        }
        self.cell_count += (rows * cols) as u64;

        let m = self.max_offset as isize;
        for dy in -m..=m {
            for dx in 0..=m {
                if dx == 0 && dy < 0 {
                    continue;
                }
                let idx = ((dy + m) * (m + 1) + dx) as usize;
                let acc = &mut pairs[idx];
                let r_lo = if dy < 0 { (-dy) as usize } else { 0 };
                let r_hi = if dy > 0 { rows - dy as usize } else { rows };
                let c_hi = cols - dx as usize;
                for r in r_lo..r_hi {
                    let r2 = (r as isize + dy) as usize;
                    for c in 0..c_hi {
                        let a = grid.cell(r, c);
                        let b = grid.cell(r2, c + dx as usize);
                        for i in 0..C {
                            let ai = a[i];
                            let row = &mut acc.cross[i * C..(i + 1) * C];
                            for (x, bj) in row.iter_mut().zip(b) {
                                *x += ai * bj;
                            }
                            acc.first[i] += ai;
                            acc.second[i] += b[i];
                        }
                        acc.count += 1;
                    }
                }
            }
        }
    }

    /// Add another accumulator's running sums to this one.
    pub fn merge(&mut self, other: &BackgroundStats) -> Result<()> {
        if other.config != self.config || other.max_offset != self.max_offset {
            return Err(Error::Config("cannot merge statistics with different configurations".into()));
        }
        let (State::Accumulating { sum, pairs }, State::Accumulating { sum: osum, pairs: opairs }) =
            (&mut self.state, &other.state)
        else {
            return Err(Error::Config("only unfinalized statistics can be merged".into()));
        };
        for (a, b) in sum.iter_mut().zip(osum) {
            *a += b;
        }
        for (a, b) in pairs.iter_mut().zip(opairs) {
            a.merge(b);
        }
        self.cell_count += other.cell_count;
        Ok(())
    }

    /// Turn running sums into the mean and centered autocorrelation blocks.
    /// Finalizing finalized statistics is a no-op.
    pub fn finalize(&mut self) -> Result<()> {
        let State::Accumulating { sum, pairs } = &self.state else {
            return Ok(());
        };
        if self.cell_count == 0 {
            return Err(Error::EmptyStats);
        }
        let n = self.cell_count as f64;
        let mut mean = [0.0; C];
        for (m, s) in mean.iter_mut().zip(sum) {
            *m = s / n;
        }
        let mut blocks = Vec::with_capacity(pairs.len());
        for p in pairs {
            let mut g = vec![0.0; BLOCK];
            if p.count > 0 {
                let k = p.count as f64;
                for i in 0..C {
                    let m1 = p.first[i] / k;
                    for j in 0..C {
                        let m2 = p.second[j] / k;
                        g[i * C + j] = p.cross[i * C + j] / k - m1 * mean[j] - mean[i] * m2 + mean[i] * mean[j];
                    }
                }
            }
            blocks.push(g);
        }
        self.state = State::Finalized { mean, blocks };
        self.enforce_symmetry();
        Ok(())
    }

    /// Derive `dx = 0, dy < 0` blocks from their mirrors and make Γ(0,0)
    /// exactly symmetric.
    fn enforce_symmetry(&mut self) {
        let m = self.max_offset as isize;
        let zero = self.index(0, 0);
        let mirrored: Vec<(usize, usize)> = (1..=m).map(|dy| (self.index(0, -dy), self.index(0, dy))).collect();
        let State::Finalized { blocks, .. } = &mut self.state else {
            return;
        };
        for (dst, src) in mirrored {
            blocks[dst] = transpose(&blocks[src]);
        }
        let g = &mut blocks[zero];
        for i in 0..C {
            for j in 0..i {
                g[j * C + i] = g[i * C + j];
            }
        }
    }

    /// μ_neg tiled over every cell of a `rows × cols` template.
    pub fn tiled_mean(&self, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let mean = self.mean().ok_or_else(|| Error::Config("background statistics are not finalized".into()))?;
        Ok((0..rows * cols).flat_map(|_| mean.iter().copied()).collect())
    }
}

fn offset_count(max_offset: usize) -> usize {
    (2 * max_offset + 1) * (max_offset + 1)
}

fn transpose(block: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; BLOCK];
    for i in 0..C {
        for j in 0..C {
            t[j * C + i] = block[i * C + j];
        }
    }
    t
}

/// Σ + λI for one template size, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct AssembledCovariance {
    rows: usize,
    cols: usize,
    lambda: f64,
    matrix: Matrix,
    factor: Cholesky,
}

impl AssembledCovariance {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Regularization actually applied (after any automatic increases).
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Σ + λI.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }
}

/// Block-Toeplitz Σ for a `rows × cols` template, without regularization.
/// Block `(p, q)` is Γ of the cell offset from `p` to `q`, zero beyond
/// `max_offset`.
pub fn assemble_sigma(stats: &BackgroundStats, rows: usize, cols: usize) -> Result<Matrix> {
    if !stats.is_finalized() {
        return Err(Error::Config("background statistics are not finalized".into()));
    }
    let cells = rows * cols;
    let n = cells * C;
    let mut sigma = Matrix::zeros(n);
    // Cache blocks by offset so equal offsets share one source.
    let m = stats.max_offset() as isize;
    let mut cache: Vec<Option<Vec<f64>>> = Vec::new();
    let span_r = rows as isize - 1;
    let span_c = cols as isize - 1;
    let width = (2 * span_c + 1) as usize;
    cache.resize((2 * span_r + 1) as usize * width, None);
    for p in 0..cells {
        let (r1, c1) = ((p / cols) as isize, (p % cols) as isize);
        for q in 0..cells {
            let (r2, c2) = ((q / cols) as isize, (q % cols) as isize);
            let (dx, dy) = (c2 - c1, r2 - r1);
            if dx.abs() > m || dy.abs() > m {
                continue;
            }
            let slot = (dy + span_r) as usize * width + (dx + span_c) as usize;
            if cache[slot].is_none() {
                cache[slot] = stats.block(dx, dy);
            }
            let block = cache[slot].as_ref().expect("offset within max_offset");
            for i in 0..C {
                for j in 0..C {
                    sigma.set(p * C + i, q * C + j, block[i * C + j]);
                }
            }
        }
    }
    Ok(sigma)
}

/// Assemble Σ + λI and factor it, doubling λ (up to 8 times) while the
/// factorization fails.
pub fn assemble_covariance(
    stats: &BackgroundStats,
    rows: usize,
    cols: usize,
    lambda: f64,
    max_dimension: usize,
) -> Result<AssembledCovariance> {
    if rows == 0 || cols == 0 {
        return Err(Error::Size("template must have at least one cell".into()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let n = rows * cols * C;
    if n > max_dimension {
        return Err(Error::Size(format!(
            "{rows}x{cols} template needs a {n}-dimensional covariance, above the limit {max_dimension}"
        )));
    }
    let sigma = assemble_sigma(stats, rows, cols)?;
    let mut lambda = lambda;
    for _ in 0..=LAMBDA_RETRIES {
        let mut matrix = sigma.clone();
        matrix.add_diagonal(lambda);
        if let Some(factor) = Cholesky::factor(&matrix) {
            return Ok(AssembledCovariance { rows, cols, lambda, matrix, factor });
        }
        lambda *= 2.0;
    }
    Err(Error::Numerical(format!(
        "covariance for {rows}x{cols} template is not positive definite even with lambda {}",
        lambda / 2.0
    )))
}

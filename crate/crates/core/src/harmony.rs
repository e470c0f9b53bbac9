//! Harmony Search for bound-constrained maximization.
//!
//! Each iteration improvises one candidate: per dimension it either copies
//! the value of a random memory entry (probability HMCR), then possibly
//! nudges it by up to ± bandwidth (probability PAR), or draws a fresh
//! uniform value. The candidate replaces the worst memory entry when it is
//! strictly better.
//!
//! Randomness comes from ChaCha8 seeded with a `u64`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HsParams {
    pub memory_size: usize,
    pub memory_consider_rate: f64,
    pub pitch_adjust_rate: f64,
    /// Per-dimension pitch step. `None` uses 5% of each dimension's range.
    pub bandwidth: Option<Vec<f64>>,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for HsParams {
    fn default() -> Self {
        HsParams {
            memory_size: 10,
            memory_consider_rate: 0.9,
            pitch_adjust_rate: 0.3,
            bandwidth: None,
            iterations: 500,
            seed: 0,
        }
    }
}

pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.05;

/// Memory contents at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonyMemory {
    pub vectors: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
    pub best_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsOutcome {
    pub best: Vec<f64>,
    pub fitness: f64,
    /// Best-ever fitness after initialization (index 0) and after every
    /// iteration.
    pub trace: Vec<f64>,
    pub memory: HarmonyMemory,
}

fn validate(bounds: &[(f64, f64)], params: &HsParams) -> Result<Vec<f64>> {
    if bounds.is_empty() {
        return Err(Error::Bounds("no dimensions".into()));
    }
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Bounds(format!("dimension {d}: need finite lo < hi, got [{lo}, {hi}]")));
        }
    }
    if params.memory_size == 0 {
        return Err(Error::Config("harmony memory size must be at least 1".into()));
    }
    for (name, p) in [("HMCR", params.memory_consider_rate), ("PAR", params.pitch_adjust_rate)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    let bandwidth: Vec<f64> = match &params.bandwidth {
        Some(bw) if bw.len() != bounds.len() => {
            return Err(Error::Config(format!("{} bandwidths for {} dimensions", bw.len(), bounds.len())))
        }
        Some(bw) => bw.clone(),
        None => bounds.iter().map(|(lo, hi)| DEFAULT_BANDWIDTH_FRACTION * (hi - lo)).collect(),
    };
    if bandwidth.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    Ok(bandwidth)
}

fn evaluate(objective: &mut impl FnMut(&[f64]) -> f64, x: &[f64]) -> f64 {
    let f = objective(x);
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

/// Maximize `objective` over the box `bounds`.
pub fn optimize(
    objective: impl FnMut(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    params: &HsParams,
) -> Result<HsOutcome> {
    optimize_seeded(objective, bounds, params, &[])
}

/// [`optimize`] with the first memory entries replaced by `initial`
/// (clamped to the bounds). The result is never worse than the best
/// initial vector.
pub fn optimize_seeded(
    mut objective: impl FnMut(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    params: &HsParams,
    initial: &[Vec<f64>],
) -> Result<HsOutcome> {
    let bandwidth = validate(bounds, params)?;
    if let Some(v) = initial.iter().find(|v| v.len() != bounds.len()) {
        return Err(Error::Bounds(format!("initial vector has {} dimensions, expected {}", v.len(), bounds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dims = bounds.len();
    let hms = params.memory_size;

    let mut vectors: Vec<Vec<f64>> = (0..hms)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>()).collect())
        .collect();
    for (slot, v) in vectors.iter_mut().zip(initial) {
        *slot = v.iter().zip(bounds).map(|(x, &(lo, hi))| x.clamp(lo, hi)).collect();
    }
    let mut fitness: Vec<f64> = vectors.iter().map(|v| evaluate(&mut objective, v)).collect();

    let argmax = |f: &[f64]| {
        let mut best = 0;
        for (i, v) in f.iter().enumerate() {
            if *v > f[best] {
                best = i;
            }
        }
        best
    };
    let mut best_index = argmax(&fitness);
    let mut best = vectors[best_index].clone();
    let mut best_fitness = fitness[best_index];
    let mut trace = Vec::with_capacity(params.iterations + 1);
    trace.push(best_fitness);

    let mut candidate = Vec::with_capacity(dims);
    for _ in 0..params.iterations {
        candidate.clear();
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            // No draw is spent on the memory test when HMCR is 0, so that
            // setting reduces to plain uniform sampling.
            let consider = params.memory_consider_rate > 0.0 && rng.gen::<f64>() < params.memory_consider_rate;
            let value = if consider {
                let mut v = vectors[rng.gen_range(0..hms)][d];
                if rng.gen::<f64>() < params.pitch_adjust_rate {
                    v += bandwidth[d] * (2.0 * rng.gen::<f64>() - 1.0);
                }
                v.clamp(lo, hi)
            } else {
                lo + (hi - lo) * rng.gen::<f64>()
            };
            candidate.push(value);
        }
        let f = evaluate(&mut objective, &candidate);
        let mut worst = 0;
        for (i, v) in fitness.iter().enumerate() {
            if *v < fitness[worst] {
                worst = i;
            }
        }
        if f > fitness[worst] {
            vectors[worst].clone_from(&candidate);
            fitness[worst] = f;
        }
        if f > best_fitness {
            best_fitness = f;
            best.clone_from(&candidate);
        }
        trace.push(best_fitness);
    }
    best_index = argmax(&fitness);
    Ok(HsOutcome {
        best,
        fitness: best_fitness,
        trace,
        memory: HarmonyMemory { vectors, fitness, best_index },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn parabola(x: &[f64]) -> f64 {
        -(x[0] - 0.3) * (x[0] - 0.3)
    }

    #[test]
    fn zero_iterations_returns_best_initial_harmony() {
        let params = HsParams { iterations: 0, seed: 4, ..HsParams::default() };
        let out = optimize(parabola, &[(0.0, 1.0)], &params).unwrap();
        let best = out.memory.fitness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.fitness, best);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let params = HsParams { seed: 17, ..HsParams::default() };
        let a = optimize(parabola, &[(0.0, 1.0)], &params).unwrap();
        let b = optimize(parabola, &[(0.0, 1.0)], &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_bounds() {
        let p = HsParams::default();
        assert!(matches!(optimize(parabola, &[], &p), Err(Error::Bounds(_))));
        assert!(matches!(optimize(parabola, &[(1.0, 1.0)], &p), Err(Error::Bounds(_))));
        assert!(matches!(optimize(parabola, &[(2.0, 1.0)], &p), Err(Error::Bounds(_))));
    }

    #[test]
    fn seeded_start_is_never_lost() {
        let params = HsParams { iterations: 50, seed: 1, ..HsParams::default() };
        let out = optimize_seeded(parabola, &[(0.0, 1.0)], &params, &[vec![0.3]]).unwrap();
        assert_eq!(out.fitness, 0.0);
    }

    #[test]
    fn memory_stays_in_bounds() {
        let bounds = [(-1.0, 2.0), (5.0, 5.5)];
        let params = HsParams { iterations: 300, pitch_adjust_rate: 1.0, seed: 3, ..HsParams::default() };
        let out = optimize(|x| x[0] + x[1], &bounds, &params).unwrap();
        for v in &out.memory.vectors {
            for (x, (lo, hi)) in v.iter().zip(bounds) {
                assert!(*x >= lo && *x <= hi);
            }
        }
    }
}

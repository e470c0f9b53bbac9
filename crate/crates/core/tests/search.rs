use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whodet_core::harmony::{optimize, optimize_seeded, HsParams};
use whodet_core::threshold::{
    candidate_biases, f1_for_biases, optimize_joint_biases, NegativeCandidate, ScoreTable,
};
use whodet_core::BBox;

fn parabola(x: &[f64]) -> f64 {
    -(x[0] - 0.3) * (x[0] - 0.3)
}

#[test]
fn parabola_peak_is_found_for_every_seed() {
    for seed in 0..10 {
        let params = HsParams { seed, ..HsParams::default() };
        let out = optimize(parabola, &[(0.0, 1.0)], &params).unwrap();
        assert!((out.best[0] - 0.3).abs() <= 0.02, "seed {seed}: {}", out.best[0]);
        assert_eq!(out.trace.len(), 501);
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0]), "seed {seed}");
        assert_eq!(*out.trace.last().unwrap(), out.fitness);
    }
}

#[test]
fn zero_memory_consideration_ignores_pitch_adjustment() {
    let a = HsParams { memory_consider_rate: 0.0, pitch_adjust_rate: 0.0, seed: 3, ..HsParams::default() };
    let b = HsParams { pitch_adjust_rate: 1.0, ..a.clone() };
    let ra = optimize(parabola, &[(0.0, 1.0)], &a).unwrap();
    let rb = optimize(parabola, &[(0.0, 1.0)], &b).unwrap();
    assert_eq!(ra, rb);
    assert!(ra.trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn seeded_memory_never_loses_the_seed() {
    let bowl = |x: &[f64]| -(x[0] - 0.71).powi(2) - (x[1] + 0.2).powi(2);
    let params = HsParams { iterations: 20, seed: 5, ..HsParams::default() };
    let seed = vec![0.71, -0.2];
    let out = optimize_seeded(bowl, &[(0.0, 1.0), (-1.0, 1.0)], &params, &[seed.clone()]).unwrap();
    assert_eq!(out.fitness, 0.0);
    assert_eq!(out.best, seed);
    // Seeds outside the box are clamped to it.
    let out = optimize_seeded(parabola, &[(0.0, 1.0)], &params, &[vec![7.0]]).unwrap();
    assert!(out.memory.vectors.iter().all(|v| (0.0..=1.0).contains(&v[0])));
}

fn neg(component: usize, raw: f64, x: f64) -> NegativeCandidate {
    NegativeCandidate { component, raw, bbox: BBox::new(x, 0.0, 10.0, 10.0) }
}

/// Two components where the first, tuned alone, lowers its bias to catch a
/// positive that the second already covers, and pays with a false positive.
fn crafted_table() -> ScoreTable {
    let positives = vec![vec![5.0, f64::NEG_INFINITY], vec![2.0, 4.0]];
    ScoreTable::new(2, positives, vec![vec![neg(0, 3.0, 0.0)]], 0.5).unwrap()
}

/// Best F1 over the product of per-component candidate biases, each
/// extended with "off".
fn grid_optimum(table: &ScoreTable) -> f64 {
    let axes: Vec<Vec<f64>> = (0..table.components())
        .map(|k| {
            let mut c = candidate_biases(table, k);
            c.push(f64::INFINITY);
            c
        })
        .collect();
    let mut best = 0.0f64;
    let mut idx = vec![0usize; axes.len()];
    loop {
        let b: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        best = best.max(f1_for_biases(table, &b));
        let mut d = 0;
        while d < idx.len() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == idx.len() {
            return best;
        }
    }
}

#[test]
fn joint_search_beats_independent_biases_on_the_crafted_table() {
    let table = crafted_table();
    let out = optimize_joint_biases(&table, &HsParams::default(), &[]).unwrap();
    assert_eq!(out.independent, vec![2.0, 4.0]);
    assert!((out.independent_f1 - 0.8).abs() < 1e-12);
    assert!(out.f1 > out.independent_f1);
    let grid = grid_optimum(&table);
    assert!((grid - 1.0).abs() < 1e-12);
    assert!((out.f1 - grid).abs() <= 1e-9);
}

#[test]
fn joint_search_is_never_worse_than_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..30 {
        let k = rng.gen_range(1..=3);
        let positives: Vec<Vec<f64>> = (0..rng.gen_range(1..8))
            .map(|_| {
                (0..k)
                    .map(|_| if rng.gen::<f64>() < 0.3 { f64::NEG_INFINITY } else { rng.gen_range(-2.0..2.0) })
                    .collect()
            })
            .collect();
        let negatives: Vec<Vec<NegativeCandidate>> = (0..rng.gen_range(0..5))
            .map(|_| {
                (0..rng.gen_range(0..4))
                    .map(|i| neg(rng.gen_range(0..k), rng.gen_range(-2.0..2.0), 20.0 * i as f64))
                    .collect()
            })
            .collect();
        let table = ScoreTable::new(k, positives, negatives, 0.5).unwrap();
        let params = HsParams { iterations: 100, seed: trial, ..HsParams::default() };
        let out = optimize_joint_biases(&table, &params, &[]).unwrap();
        assert!(out.f1 >= out.independent_f1, "trial {trial}");
        assert!(out.f1 <= grid_optimum(&table) + 1e-12);
        assert_eq!(f1_for_biases(&table, &out.biases), out.f1);
    }
}

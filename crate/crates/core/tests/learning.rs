use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whodet_core::background::{assemble_covariance, BackgroundStats, FeatureConfig, DEFAULT_MAX_DIMENSION};
use whodet_core::kmeans::{kmeans, squared_distance};
use whodet_core::learn::{learn_component, learn_mixture, loo_positive_scores, solve_checked, Cluster};
use whodet_core::linalg::{dot, max_abs};
use whodet_core::{BBox, CellGrid, Image, LearnParams, Provenance, Sample, HOG_CHANNELS};

const C: usize = HOG_CHANNELS;

fn zero_gamma_stats(mean: f64) -> BackgroundStats {
    let m = 2;
    let blocks = vec![vec![0.0; C * C]; (2 * m + 1) * (m + 1)];
    BackgroundStats::from_parts(FeatureConfig { cell_size: 8 }, m, 100, [mean; C], blocks).unwrap()
}

fn noise_stats(max_offset: usize, seed: u64) -> BackgroundStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = BackgroundStats::new(FeatureConfig { cell_size: 8 }, max_offset);
    for _ in 0..3 {
        let (rows, cols) = (20, 20);
        let values = (0..rows * cols * C).map(|_| rng.gen::<f64>()).collect();
        stats.accumulate(&CellGrid::new(rows, cols, 8, 1.0, values).unwrap()).unwrap();
    }
    stats.finalize().unwrap();
    stats
}

/// Smoothed noise with a bright square per box, for end-to-end learning.
fn scene(seed: u64, boxes: &[BBox]) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..96 * 96).map(|_| rng.gen::<f64>()).collect();
    Image::from_fn(96, 96, |x, y| {
        let inside = boxes.iter().any(|b| {
            let (fx, fy) = (x as f64, y as f64);
            fx >= b.x + 8.0 && fx < b.right() - 8.0 && fy >= b.y + 8.0 && fy < b.bottom() - 8.0
        });
        if inside {
            0.9
        } else {
            0.3 * base[y * 96 + x]
        }
    })
    .unwrap()
}

#[test]
fn zero_autocorrelation_and_unit_lambda_solve_is_exact() {
    let stats = zero_gamma_stats(0.125);
    let cov = assemble_covariance(&stats, 2, 3, 1.0, DEFAULT_MAX_DIMENSION).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rhs: Vec<f64> = (0..6 * C).map(|_| rng.gen::<f64>() - 0.5).collect();
    let w = solve_checked(&cov, &rhs).unwrap();
    assert!(w.iter().zip(&rhs).all(|(a, b)| a.to_bits() == b.to_bits()));

    let boxes = [BBox::new(16.0, 16.0, 48.0, 48.0)];
    let images: Vec<Image> = (0..4).map(|i| scene(i, &boxes)).collect();
    let samples: Vec<Sample> = images.iter().map(|im| Sample::new(im, boxes[0]).unwrap()).collect();
    let params = LearnParams { k_ar: 1, k_who: 1, lambda: 1.0, mirror: false, max_template: 5, ..LearnParams::default() };
    let out = learn_mixture("square", &samples, &stats, &params, Provenance::SourceDataset).unwrap();
    for (comp, cluster) in out.mixture.components.iter().zip(&out.clusters) {
        let mean = stats.tiled_mean(comp.rows, comp.cols).unwrap();
        for ((w, p), n) in comp.weights.iter().zip(&cluster.mean_pos).zip(&mean) {
            assert_eq!(w.to_bits(), (p - n).to_bits());
        }
    }
}

#[test]
fn learned_components_meet_the_residual_bound() {
    let stats = noise_stats(4, 2);
    let boxes = [BBox::new(16.0, 16.0, 48.0, 48.0)];
    let images: Vec<Image> = (0..6).map(|i| scene(10 + i, &boxes)).collect();
    let samples: Vec<Sample> = images.iter().map(|im| Sample::new(im, boxes[0]).unwrap()).collect();
    let params = LearnParams { k_ar: 1, k_who: 2, max_template: 5, ..LearnParams::default() };
    let out = learn_mixture("square", &samples, &stats, &params, Provenance::SourceDataset).unwrap();
    assert!(!out.mixture.is_empty());
    for (comp, cluster) in out.mixture.components.iter().zip(&out.clusters) {
        let cov = assemble_covariance(&stats, comp.rows, comp.cols, params.lambda, params.max_dimension).unwrap();
        let mean = stats.tiled_mean(comp.rows, comp.cols).unwrap();
        let rhs: Vec<f64> = cluster.mean_pos.iter().zip(&mean).map(|(p, n)| p - n).collect();
        let residual: Vec<f64> = cov.matrix().mul_vec(&comp.weights).iter().zip(&rhs).map(|(a, b)| a - b).collect();
        assert!(max_abs(&residual) <= 1e-8 * max_abs(&rhs), "{} vs {}", max_abs(&residual), max_abs(&rhs));
    }
}

#[test]
fn solve_is_linear_in_the_right_hand_side() {
    let stats = noise_stats(2, 3);
    let cov = assemble_covariance(&stats, 2, 2, 0.01, DEFAULT_MAX_DIMENSION).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<f64> = (0..4 * C).map(|_| rng.gen::<f64>()).collect();
    let b: Vec<f64> = (0..4 * C).map(|_| rng.gen::<f64>()).collect();
    let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
    let (wa, wb, wc) = (cov.solve(&a), cov.solve(&b), cov.solve(&combo));
    let scale = max_abs(&wc);
    for i in 0..wc.len() {
        assert!((wc[i] - (2.0 * wa[i] - 3.0 * wb[i])).abs() <= 1e-9 * scale);
    }
}

fn cluster_of(features: Vec<Vec<f64>>, rows: usize, cols: usize) -> Cluster {
    let n = features.len() as f64;
    let dim = features[0].len();
    let mean_pos = (0..dim).map(|k| features.iter().map(|f| f[k]).sum::<f64>() / n).collect();
    Cluster {
        members: (0..features.len()).collect(),
        template_rows: rows,
        template_cols: cols,
        mean_pos,
        who_centroid: Vec::new(),
        features,
        mirrored: Vec::new(),
    }
}

#[test]
fn planted_direction_is_recovered() {
    let stats = noise_stats(2, 5);
    let cov = assemble_covariance(&stats, 1, 2, 0.01, DEFAULT_MAX_DIMENSION).unwrap();
    let mean = stats.tiled_mean(1, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let planted: Vec<f64> = (0..2 * C).map(|_| rng.gen::<f64>() - 0.5).collect();
    let features: Vec<Vec<f64>> = (0..400)
        .map(|_| mean.iter().zip(&planted).map(|(m, p)| m + p + 0.3 * (rng.gen::<f64>() - 0.5)).collect())
        .collect();
    let comp = learn_component(&cluster_of(features, 1, 2), &cov, &mean, Provenance::SourceDataset).unwrap();
    let cos = dot(&comp.weights, &planted) / (dot(&comp.weights, &comp.weights) * dot(&planted, &planted)).sqrt();
    assert!(cos > 0.9, "cosine {cos}");
}

#[test]
fn identical_members_have_full_model_loo_scores() {
    let stats = noise_stats(1, 7);
    let cov = assemble_covariance(&stats, 1, 1, 0.01, DEFAULT_MAX_DIMENSION).unwrap();
    let mean = stats.tiled_mean(1, 1).unwrap();
    let x: Vec<f64> = (0..C).map(|k| 0.2 + 0.01 * k as f64).collect();
    let cluster = cluster_of(vec![x.clone(); 5], 1, 1);
    let comp = learn_component(&cluster, &cov, &mean, Provenance::SourceDataset).unwrap();
    let full = dot(&comp.weights, &x);
    let loo = loo_positive_scores(&cluster, &cov, &mean).unwrap();
    assert!(!loo.degenerate);
    for s in loo.scores {
        assert!((s - full).abs() <= 1e-9 * full.abs().max(1.0), "{s} vs {full}");
    }
    let single = loo_positive_scores(&cluster_of(vec![x], 1, 1), &cov, &mean).unwrap();
    assert!(single.degenerate);
}

#[test]
fn leave_one_out_scores_are_not_optimistic() {
    let stats = noise_stats(1, 8);
    let cov = assemble_covariance(&stats, 1, 2, 0.01, DEFAULT_MAX_DIMENSION).unwrap();
    let mean = stats.tiled_mean(1, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut below, mut total) = (0, 0);
    for _ in 0..40 {
        let shift: Vec<f64> = (0..2 * C).map(|_| 0.2 * rng.gen::<f64>()).collect();
        let features: Vec<Vec<f64>> = (0..6)
            .map(|_| mean.iter().zip(&shift).map(|(m, s)| m + s + (rng.gen::<f64>() - 0.5) * 0.5).collect())
            .collect();
        let cluster = cluster_of(features, 1, 2);
        let comp = learn_component(&cluster, &cov, &mean, Provenance::SourceDataset).unwrap();
        let loo = loo_positive_scores(&cluster, &cov, &mean).unwrap();
        for (x, s) in cluster.features.iter().zip(&loo.scores) {
            total += 1;
            if *s <= dot(&comp.weights, x) {
                below += 1;
            }
        }
    }
    assert!(below as f64 >= 0.95 * total as f64, "{below}/{total}");
}

/// Minimum WCSS over every assignment of `points` to at most `k` clusters.
fn brute_force_wcss(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut wcss = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let dim = members[0].len();
            let centroid: Vec<f64> =
                (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
            wcss += members.iter().map(|p| squared_distance(p, &centroid)).sum::<f64>();
        }
        best = best.min(wcss);
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

#[test]
fn kmeans_reaches_the_exhaustive_optimum_on_separated_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let points: Vec<Vec<f64>> = (0..9)
        .map(|i| {
            let c = centers[i % 3];
            vec![c[0] + rng.gen::<f64>(), c[1] + rng.gen::<f64>()]
        })
        .collect();
    let optimum = brute_force_wcss(&points, 3);
    for seed in 0..5 {
        let km = kmeans(&points, 3, seed, 100);
        assert!((km.wcss() - optimum).abs() <= 1e-9 * optimum.max(1.0), "seed {seed}: {} vs {optimum}", km.wcss());
    }
}

#[test]
fn kmeans_ends_at_a_lloyd_fixed_point_no_better_than_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10 {
        let points: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let optimum = brute_force_wcss(&points, 2);
        let km = kmeans(&points, 2, trial, 100);
        assert!(km.wcss() >= optimum - 1e-12);
        for (p, &a) in points.iter().zip(&km.assignments) {
            let d = squared_distance(p, &km.centroids[a]);
            assert!(km.centroids.iter().all(|c| d <= squared_distance(p, c) + 1e-12));
        }
        assert!(km.wcss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whodet_core::background::{assemble_covariance, assemble_sigma, BackgroundStats, FeatureConfig};
use whodet_core::hog::{
    build_pyramid, compute_cell_grid, level_scale, ENERGY_OFFSET, HOG_CHANNELS, INSENSITIVE_OFFSET, SENSITIVE_BINS,
};
use whodet_core::{CellGrid, Image};

const C: usize = HOG_CHANNELS;

fn noise_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| rng.gen::<f64>()).unwrap()
}

fn grid(rows: usize, cols: usize, values: Vec<f64>) -> CellGrid {
    CellGrid::new(rows, cols, 8, 1.0, values).unwrap()
}

#[test]
fn sixty_four_pixel_image_gives_six_by_six_cells() {
    let g = compute_cell_grid(&noise_image(64, 64, 1), 8).unwrap();
    assert_eq!((g.rows(), g.cols()), (6, 6));
    assert_eq!(g.values().len(), 36 * C);
}

#[test]
fn rotating_by_half_a_turn_permutes_channels() {
    let img = noise_image(48, 40, 2);
    let a = compute_cell_grid(&img, 8).unwrap();
    let b = compute_cell_grid(&img.rotate180(), 8).unwrap();
    let (rows, cols) = (a.rows(), a.cols());
    let mut worst: f64 = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let x = a.cell(r, c);
            let y = b.cell(rows - 1 - r, cols - 1 - c);
            for o in 0..SENSITIVE_BINS {
                worst = worst.max((x[o] - y[(o + 9) % SENSITIVE_BINS]).abs());
            }
            for o in 0..9 {
                worst = worst.max((x[INSENSITIVE_OFFSET + o] - y[INSENSITIVE_OFFSET + o]).abs());
            }
            for (i, j) in [(0, 3), (1, 2), (2, 1), (3, 0)] {
                worst = worst.max((x[ENERGY_OFFSET + i] - y[ENERGY_OFFSET + j]).abs());
            }
        }
    }
    assert!(worst < 1e-9, "max deviation {worst}");
}

#[test]
fn brightness_offset_leaves_features_unchanged() {
    let img = noise_image(40, 40, 3);
    let shifted = Image::from_fn(40, 40, |x, y| 0.5 * img.get(x, y, 0) + 0.25).unwrap();
    let halved = Image::from_fn(40, 40, |x, y| 0.5 * img.get(x, y, 0)).unwrap();
    let a = compute_cell_grid(&halved, 8).unwrap();
    let b = compute_cell_grid(&shifted, 8).unwrap();
    let worst = a.values().iter().zip(b.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "max deviation {worst}");
}

#[test]
fn pyramid_level_count_matches_the_scale_formula() {
    let img = Image::filled(640, 480, 1, 0.5).unwrap();
    let p = build_pyramid(&img, 8, 5, (6, 6)).unwrap();
    // Largest k for which the level still holds a 6x6 template after the
    // border trim, with level sizes rounded as the resizer does.
    let expected = (0..)
        .take_while(|&k| {
            let s = level_scale(k, 5);
            let w = (640.0 * s).round() as usize / 8;
            let h = (480.0 * s).round() as usize / 8;
            w >= 8 && h >= 8
        })
        .count();
    assert_eq!(p.levels().len(), expected);
    assert_eq!(expected, 15);
    for (k, level) in p.levels().iter().enumerate() {
        let s = level_scale(k, 5);
        assert!((level.scale() - s).abs() < 1e-12);
        assert!(level.rows() >= 6 && level.cols() >= 6);
    }
}

/// Brute-force centered autocorrelation over every ordered cell pair at
/// offset `(dx, dy)`.
fn brute_gamma(g: &CellGrid, mean: &[f64], dx: isize, dy: isize) -> Vec<f64> {
    let mut out = vec![0.0; C * C];
    let mut n = 0.0;
    for r in 0..g.rows() as isize {
        for c in 0..g.cols() as isize {
            let (r2, c2) = (r + dy, c + dx);
            if r2 < 0 || c2 < 0 || r2 >= g.rows() as isize || c2 >= g.cols() as isize {
                continue;
            }
            let a = g.cell(r as usize, c as usize);
            let b = g.cell(r2 as usize, c2 as usize);
            for i in 0..C {
                for j in 0..C {
                    out[i * C + j] += (a[i] - mean[i]) * (b[j] - mean[j]);
                }
            }
            n += 1.0;
        }
    }
    out.iter().map(|v| v / n).collect()
}

#[test]
fn small_grid_gamma_matches_hand_computation() {
    // Only two channels carry data; the remaining 29 stay zero.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut values = vec![0.0; 9 * C];
    for cell in 0..9 {
        values[cell * C] = rng.gen::<f64>();
        values[cell * C + 1] = rng.gen::<f64>();
    }
    let g = grid(3, 3, values);
    let mut stats = BackgroundStats::new(FeatureConfig { cell_size: 8 }, 1);
    stats.accumulate(&g).unwrap();
    stats.finalize().unwrap();
    let mean = stats.mean().unwrap().to_vec();
    for ch in 0..2 {
        let hand: f64 = (0..9).map(|k| g.values()[k * C + ch]).sum::<f64>() / 9.0;
        assert!((mean[ch] - hand).abs() < 1e-15);
    }
    for dy in -1..=1 {
        for dx in -1..=1 {
            let got = stats.block(dx, dy).unwrap();
            let want = brute_gamma(&g, &mean, dx, dy);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-14, "offset ({dx},{dy}): {a} vs {b}");
            }
        }
    }
    assert_eq!(stats.block(2, 0), None);
}

#[test]
fn white_noise_has_diagonal_gamma() {
    let sigma2: f64 = 0.04;
    let half = (3.0 * sigma2).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stats = BackgroundStats::new(FeatureConfig { cell_size: 8 }, 2);
    let (rows, cols) = (40, 40);
    for _ in 0..4 {
        let values = (0..rows * cols * C).map(|_| rng.gen_range(-half..half)).collect();
        stats.accumulate(&grid(rows, cols, values)).unwrap();
    }
    stats.finalize().unwrap();
    let n = stats.cell_count() as f64;
    // Standard error of a variance estimate of a uniform variable: the
    // fourth central moment is 9σ⁴/5.
    let se_var = ((9.0 / 5.0 - 1.0) * sigma2 * sigma2 / n).sqrt();
    let se_cross = sigma2 / n.sqrt();
    let g0 = stats.block(0, 0).unwrap();
    for i in 0..C {
        for j in 0..C {
            let v = g0[i * C + j];
            if i == j {
                assert!((v - sigma2).abs() < 5.0 * se_var, "var {v}");
            } else {
                assert!(v.abs() < 5.0 * se_cross, "cov {v}");
            }
        }
    }
    for (dx, dy) in [(1, 0), (0, 1), (2, -1), (1, 2)] {
        let g = stats.block(dx, dy).unwrap();
        let worst = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 5.0 * se_cross, "offset ({dx},{dy}) max {worst}");
    }
}

#[test]
fn accumulation_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grids: Vec<CellGrid> =
        (0..3).map(|_| grid(7, 9, (0..63 * C).map(|_| rng.gen::<f64>()).collect())).collect();
    let run = |order: &[usize]| {
        let mut s = BackgroundStats::new(FeatureConfig { cell_size: 8 }, 3);
        for &i in order {
            s.accumulate(&grids[i]).unwrap();
        }
        s.finalize().unwrap();
        s
    };
    let a = run(&[0, 1, 2]);
    let b = run(&[2, 0, 1]);
    for (x, y) in a.stored_blocks().unwrap().iter().flatten().zip(b.stored_blocks().unwrap().iter().flatten()) {
        assert!((x - y).abs() < 1e-13);
    }
}

/// Grid whose column `c` holds the row vectors cyclically shifted by `c`,
/// so every column and every horizontal pair position sees the same data.
fn cyclic_grid(rows: usize, cols: usize, seed: u64) -> (CellGrid, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis: Vec<Vec<f64>> = (0..rows).map(|_| (0..C).map(|_| rng.gen::<f64>()).collect()).collect();
    let mut values = Vec::with_capacity(rows * cols * C);
    for r in 0..rows {
        for c in 0..cols {
            values.extend_from_slice(&basis[(r + c) % rows]);
        }
    }
    (grid(rows, cols, values), basis)
}

#[test]
fn one_by_two_sigma_matches_pair_covariance() {
    let (g, _) = cyclic_grid(20, 12, 7);
    let mut stats = BackgroundStats::new(FeatureConfig { cell_size: 8 }, 1);
    stats.accumulate(&g).unwrap();
    stats.finalize().unwrap();
    let sigma = assemble_sigma(&stats, 1, 2).unwrap();

    let pairs: Vec<Vec<f64>> = (0..g.rows())
        .flat_map(|r| (0..g.cols() - 1).map(move |c| (r, c)))
        .map(|(r, c)| g.cell(r, c).iter().chain(g.cell(r, c + 1)).copied().collect())
        .collect();
    let n = pairs.len() as f64;
    let mean: Vec<f64> = (0..2 * C).map(|i| pairs.iter().map(|p| p[i]).sum::<f64>() / n).collect();
    let mut worst: f64 = 0.0;
    for i in 0..2 * C {
        for j in 0..2 * C {
            let brute = pairs.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / n;
            worst = worst.max((sigma.get(i, j) - brute).abs());
        }
    }
    assert!(worst <= 1e-10, "max deviation {worst}");
}

#[test]
fn sigma_blocks_depend_only_on_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut stats = BackgroundStats::new(FeatureConfig { cell_size: 8 }, 2);
    stats.accumulate(&grid(9, 9, (0..81 * C).map(|_| rng.gen::<f64>()).collect())).unwrap();
    stats.finalize().unwrap();
    let (rows, cols) = (2, 3);
    let sigma = assemble_sigma(&stats, rows, cols).unwrap();
    assert_eq!(sigma.max_asymmetry(), 0.0);
    let block = |p: usize, q: usize| -> Vec<f64> {
        (0..C).flat_map(|i| (0..C).map(move |j| (i, j))).map(|(i, j)| sigma.get(p * C + i, q * C + j)).collect()
    };
    // Cells 0→1 and 1→2 and 3→4 share the offset (1, 0).
    assert_eq!(block(0, 1), block(1, 2));
    assert_eq!(block(0, 1), block(3, 4));
    assert_eq!(block(0, 1), stats.block(1, 0).unwrap());
    // 0→4 and 1→5: offset (1, 1).
    assert_eq!(block(0, 4), block(1, 5));
    // Too few cells for a positive definite estimate: λ is raised.
    let cov = assemble_covariance(&stats, rows, cols, 1e-3, 10_000).unwrap();
    assert!(cov.lambda() > 1e-3);
    let mut rich = BackgroundStats::new(FeatureConfig { cell_size: 8 }, 2);
    for _ in 0..4 {
        rich.accumulate(&grid(30, 30, (0..900 * C).map(|_| rng.gen::<f64>()).collect())).unwrap();
    }
    rich.finalize().unwrap();
    let cov = assemble_covariance(&rich, rows, cols, 1e-3, 10_000).unwrap();
    assert_eq!(cov.lambda(), 1e-3);
}

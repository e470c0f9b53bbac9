#![allow(dead_code)]

use std::path::Path;

use whodet::pipeline::compute_stats_in_memory;
use whodet::synth::{render_backgrounds, render_class, write_class, Domain, Shape, SynthConfig};
use whodet_core::learn::LearnParams;
use whodet_core::{BBox, BackgroundStats, Component, Image, Mixture, Provenance};

pub const SHAPES: [Shape; 3] = [Shape::Disk, Shape::Triangle, Shape::Cross];

/// Source-domain shapes dataset with `per_class` images of each class.
pub fn shapes_dataset(root: &Path, per_class: usize, seed: u64) {
    for shape in SHAPES {
        let images = render_class(shape, &Domain::SOURCE, "source", &SynthConfig::default(), per_class, seed);
        write_class(root, shape.name(), &images).unwrap();
    }
}

/// Offsets up to 7 cells, enough for templates of side 8.
pub fn small_stats() -> BackgroundStats {
    let config = SynthConfig { width: 192, height: 192, ..SynthConfig::default() };
    compute_stats_in_memory(&render_backgrounds(&config, 12, 1), 8, 7, 5).unwrap()
}

pub fn small_params() -> LearnParams {
    LearnParams { k_ar: 1, k_who: 1, max_template: 8, ..LearnParams::default() }
}

pub const GLYPH: usize = 32;

/// A ring with a vertical bar, the planted object of the detection tests.
fn glyph(dx: f64, dy: f64) -> f64 {
    let (u, v) = (dx - GLYPH as f64 / 2.0, dy - GLYPH as f64 / 2.0);
    let r = (u * u + v * v).sqrt();
    if (9.0..13.0).contains(&r) || (u.abs() < 2.0 && v.abs() < 10.0) {
        1.0
    } else {
        0.0
    }
}

pub fn planted_scene(seed: u64, w: usize, h: usize, corners: &[(usize, usize)]) -> Image {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..w * h).map(|_| 0.2 * rng.gen::<f64>()).collect();
    Image::from_fn(w, h, |x, y| {
        for &(cx, cy) in corners {
            if x >= cx && y >= cy && x < cx + GLYPH && y < cy + GLYPH {
                return 0.1 + 0.8 * glyph((x - cx) as f64, (y - cy) as f64);
            }
        }
        base[y * w + x]
    })
    .unwrap()
}

pub fn planted_box(corner: (usize, usize)) -> BBox {
    BBox::new(corner.0 as f64, corner.1 as f64, GLYPH as f64, GLYPH as f64)
}

/// One-component mixture whose template is the glyph's own features.
pub fn planted_mixture(class_name: &str) -> Mixture {
    let clean = planted_scene(99, 96, 96, &[(32, 32)]);
    let grid = whodet_core::hog::compute_cell_grid(&clean, 8).unwrap();
    let mut w = grid.window(3, 3, 4, 4);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|v| *v -= mean);
    Mixture {
        class_name: class_name.into(),
        cell_size: 8,
        components: vec![Component::new(4, 4, w, Provenance::SourceDataset, 1).unwrap()],
        params: LearnParams::default(),
        biases_stale: false,
    }
}

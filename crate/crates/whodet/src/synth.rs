//! Synthetic shapes datasets: filled geometric shapes composited on
//! textured noise, rendered in two visually distinct domains.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whodet_core::{BBox, Image};

use crate::dataset::{write_annotations, AnnotatedBox, AnnotatedImage, DatasetError, IMAGES_DIR};
use crate::imageio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Triangle,
    Cross,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Disk, Shape::Triangle, Shape::Cross, Shape::Ring];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
        }
    }

    pub fn from_name(name: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Whether the unit-square point `(u, v)` is inside the shape.
    fn covers(self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - 0.5, v - 0.5);
        match self {
            Shape::Disk => du * du + dv * dv <= 0.25,
            Shape::Triangle => du.abs() <= v / 2.0,
            Shape::Cross => du.abs() <= 1.0 / 6.0 || dv.abs() <= 1.0 / 6.0,
            Shape::Ring => {
                let r2 = du * du + dv * dv;
                (0.09..=0.25).contains(&r2)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Texture {
    /// Per-pixel noise lightly smoothed.
    Grain,
    /// Smooth low-frequency blotches interpolated from a coarse lattice.
    Blotches { period: usize },
}

/// Rendering style of one domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub texture: Texture,
    pub background_level: f64,
    pub texture_amplitude: f64,
    pub grain_amplitude: f64,
    pub object_level: f64,
    pub object_jitter: f64,
    /// Probability that an object is drawn darker than the background by
    /// the same contrast instead of brighter.
    pub dark_fraction: f64,
}

impl Domain {
    /// Bright shapes on dark fine-grained noise.
    pub const SOURCE: Domain = Domain {
        texture: Texture::Grain,
        background_level: 0.3,
        texture_amplitude: 0.2,
        grain_amplitude: 0.0,
        object_level: 0.8,
        object_jitter: 0.1,
        dark_fraction: 0.0,
    };

    /// Lower-contrast shapes of either polarity on mid-gray blotchy
    /// backgrounds.
    pub const SHIFTED: Domain = Domain {
        texture: Texture::Blotches { period: 12 },
        background_level: 0.5,
        texture_amplitude: 0.4,
        grain_amplitude: 0.1,
        object_level: 0.75,
        object_jitter: 0.06,
        dark_fraction: 0.5,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub min_object: f64,
    pub max_object: f64,
    /// Boxes have aspect ratio (w/h) uniformly in `[1/a, a]`.
    pub aspect_jitter: f64,
    /// Minimum distance between an object and the image border.
    pub margin: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { width: 160, height: 160, min_object: 48.0, max_object: 88.0, aspect_jitter: 1.15, margin: 16 }
    }
}

/// One rendered image with its labeled boxes.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub file_name: String,
    pub image: Image,
    pub boxes: Vec<(BBox, String)>,
}

fn rng_for(seed: u64, stream: &str, index: usize) -> ChaCha8Rng {
    // FNV-1a over the stream name keeps streams independent of each other.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    rng.set_stream(index as u64);
    rng
}

fn background(domain: &Domain, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut px = vec![domain.background_level; width * height];
    match domain.texture {
        Texture::Grain => {
            let raw: Vec<f64> = (0..width * height).map(|_| rng.gen::<f64>() - 0.5).collect();
            for y in 0..height {
                for x in 0..width {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for (dx, dy) in [(0i64, 0i64), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                        let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                        if sx >= 0 && sy >= 0 && (sx as usize) < width && (sy as usize) < height {
                            acc += raw[sy as usize * width + sx as usize];
                            n += 1.0;
                        }
                    }
                    px[y * width + x] += domain.texture_amplitude * 2.0 * acc / n;
                }
            }
        }
        Texture::Blotches { period } => {
            let gw = width / period + 2;
            let gh = height / period + 2;
            let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>() - 0.5).collect();
            for y in 0..height {
                for x in 0..width {
                    let fx = x as f64 / period as f64;
                    let fy = y as f64 / period as f64;
                    let (ix, iy) = (fx as usize, fy as usize);
                    let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
                    let l = |i: usize, j: usize| lattice[j * gw + i];
                    let top = l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx;
                    let bottom = l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx;
                    px[y * width + x] += domain.texture_amplitude * (top * (1.0 - ty) + bottom * ty);
                }
            }
        }
    }
    if domain.grain_amplitude > 0.0 {
        for p in &mut px {
            *p += domain.grain_amplitude * (rng.gen::<f64>() - 0.5);
        }
    }
    px
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Composite `shape` into `px` over `bbox` with 4x4 supersampled coverage.
fn paint(px: &mut [f64], width: usize, shape: Shape, bbox: BBox, level: f64) {
    let x0 = bbox.x.floor() as usize;
    let y0 = bbox.y.floor() as usize;
    let x1 = bbox.right().ceil() as usize;
    let y1 = bbox.bottom().ceil() as usize;
    let height = px.len() / width;
    for y in y0..y1.min(height) {
        for x in x0..x1.min(width) {
            let mut hits = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let u = (x as f64 + (sx as f64 + 0.5) / 4.0 - bbox.x) / bbox.w;
                    let v = (y as f64 + (sy as f64 + 0.5) / 4.0 - bbox.y) / bbox.h;
                    if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) && shape.covers(u, v) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let a = hits as f64 / 16.0;
                let p = &mut px[y * width + x];
                *p = *p * (1.0 - a) + level * a;
            }
        }
    }
}

fn finish(width: usize, height: usize, mut px: Vec<f64>) -> Image {
    for p in &mut px {
        *p = p.clamp(0.0, 1.0);
    }
    Image::new(width, height, 1, px).expect("synthetic image dimensions are valid")
}

/// Render `count` images of one shape class, one object per image.
pub fn render_class(
    shape: Shape,
    domain: &Domain,
    domain_name: &str,
    config: &SynthConfig,
    count: usize,
    seed: u64,
) -> Vec<SynthImage> {
    (0..count)
        .map(|i| {
            let mut rng = rng_for(seed, &format!("{domain_name}/{}", shape.name()), i);
            let mut px = background(domain, config.width, config.height, &mut rng);
            let side = rng.gen_range(config.min_object..=config.max_object);
            let log_a = config.aspect_jitter.ln();
            let aspect = rng.gen_range(-log_a..=log_a).exp();
            let m = config.margin;
            let w = (side * aspect.sqrt()).round().min((config.width - 2 * m) as f64);
            let h = (side / aspect.sqrt()).round().min((config.height - 2 * m) as f64);
            let x = rng.gen_range(m..=(config.width - m - w as usize)) as f64;
            let y = rng.gen_range(m..=(config.height - m - h as usize)) as f64;
            let bbox = BBox::new(x, y, w, h);
            let mut level = domain.object_level + domain.object_jitter * (rng.gen::<f64>() - 0.5) * 2.0;
            if rng.gen::<f64>() < domain.dark_fraction {
                level = 2.0 * domain.background_level - level;
            }
            paint(&mut px, config.width, shape, bbox, level);
            SynthImage {
                file_name: format!("{}_{i:04}.png", shape.name()),
                image: finish(config.width, config.height, px),
                boxes: vec![(bbox, shape.name().to_string())],
            }
        })
        .collect()
}

/// Generic clutter images for background statistics: both textures with
/// random bars and blobs of random intensity.
pub fn render_backgrounds(config: &SynthConfig, count: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| {
            let mut rng = rng_for(seed, "background", i);
            let mut domain = if i % 2 == 0 { Domain::SOURCE } else { Domain::SHIFTED };
            domain.background_level = rng.gen_range(0.2..0.8);
            let mut px = background(&domain, config.width, config.height, &mut rng);
            for _ in 0..rng.gen_range(2..6) {
                let w = rng.gen_range(6.0..config.width as f64 / 2.0);
                let h = rng.gen_range(6.0..config.height as f64 / 2.0);
                let x = rng.gen_range(0.0..config.width as f64 - w);
                let y = rng.gen_range(0.0..config.height as f64 - h);
                let level = rng.gen::<f64>();
                let shape = if rng.gen::<bool>() { Shape::Disk } else { Shape::Cross };
                let mut clutter = vec![0.0; px.len()];
                if rng.gen::<bool>() {
                    paint(&mut clutter, config.width, Shape::Cross, BBox::new(x, y, w, h), 1.0);
                    // A single bar from the cross's horizontal arm.
                    for (j, c) in clutter.iter_mut().enumerate() {
                        let yy = (j / config.width) as f64;
                        if (yy - (y + h / 2.0)).abs() > h / 6.0 {
                            *c = 0.0;
                        }
                    }
                } else {
                    paint(&mut clutter, config.width, shape, BBox::new(x, y, w, h), 1.0);
                }
                for (p, c) in px.iter_mut().zip(&clutter) {
                    *p = *p * (1.0 - c) + level * c;
                }
            }
            finish(config.width, config.height, px)
        })
        .collect()
}

/// Save rendered images as class `class_name` of the dataset at `root`.
pub fn write_class(root: &Path, class_name: &str, images: &[SynthImage]) -> Result<(), DatasetError> {
    let dir = root.join(class_name).join(IMAGES_DIR);
    std::fs::create_dir_all(&dir).map_err(|source| DatasetError::Io { path: dir.clone(), source })?;
    let mut records = Vec::with_capacity(images.len());
    for img in images {
        let path = dir.join(&img.file_name);
        imageio::save_png(&img.image, &path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let boxes = img
            .boxes
            .iter()
            .map(|(b, c)| AnnotatedBox { x: b.x as u32, y: b.y as u32, w: b.w as u32, h: b.h as u32, class_name: c.clone() })
            .collect();
        records.push(AnnotatedImage {
            path,
            width: img.image.width() as u32,
            height: img.image.height() as u32,
            boxes,
        });
    }
    write_annotations(root, class_name, &records)
}

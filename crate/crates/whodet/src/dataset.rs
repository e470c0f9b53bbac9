//! Class-structured datasets: `root/<class>/images/*` plus
//! `root/<class>/annotations.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use whodet_core::BBox;

use crate::imageio;

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";
pub const DEFAULT_MIN_BOX_PX: u32 = 16;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid record {index} in {path}: {message}")]
    Validation { path: PathBuf, index: usize, message: String },
    #[error("unreadable image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    #[serde(rename = "class")]
    pub class_name: String,
}

impl AnnotatedBox {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<AnnotatedBox>,
}

impl AnnotatedImage {
    pub fn file_name(&self) -> String {
        self.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn boxes_of<'a>(&'a self, class_name: &'a str) -> impl Iterator<Item = BBox> + 'a {
        self.boxes.iter().filter(move |b| b.class_name == class_name).map(AnnotatedBox::bbox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub min_box_px: u32,
    pub split_seed: u64,
    pub train_ratio: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { min_box_px: DEFAULT_MIN_BOX_PX, split_seed: 0, train_ratio: DEFAULT_TRAIN_RATIO }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: BTreeMap<String, Vec<AnnotatedImage>>,
    pub options: ScanOptions,
}

/// Deterministic train/test assignment from a seeded hash of the class and
/// file name.
pub fn split_of(class_name: &str, file_name: &str, seed: u64, train_ratio: f64) -> Split {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(class_name.as_bytes());
    h.update([0]);
    h.update(file_name.as_bytes());
    let digest = h.finalize();
    let mut top = [0u8; 8];
    top.copy_from_slice(&digest[..8]);
    let u = (u64::from_le_bytes(top) >> 11) as f64 / (1u64 << 53) as f64;
    if u < train_ratio {
        Split::Train
    } else {
        Split::Test
    }
}

impl DatasetIndex {
    pub fn class_names(&self) -> Vec<&str> {
        self.classes.keys().map(String::as_str).collect()
    }

    pub fn split_of(&self, class_name: &str, image: &AnnotatedImage) -> Split {
        split_of(class_name, &image.file_name(), self.options.split_seed, self.options.train_ratio)
    }

    /// Images of `class_name` in `split`, in file-name order.
    pub fn images(&self, class_name: &str, split: Split) -> Result<Vec<&AnnotatedImage>, DatasetError> {
        let all = self
            .classes
            .get(class_name)
            .ok_or_else(|| DatasetError::Data(format!("unknown class {class_name:?}")))?;
        Ok(all.iter().filter(|img| self.split_of(class_name, img) == split).collect())
    }

    /// Every image of every class in `split`, class by class.
    pub fn split_images(&self, split: Split) -> Vec<&AnnotatedImage> {
        self.classes
            .iter()
            .flat_map(|(c, imgs)| imgs.iter().filter(move |i| self.split_of(c, i) == split))
            .collect()
    }

    pub fn image_count(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn box_count(&self) -> usize {
        self.classes.values().flatten().map(|i| i.boxes.len()).sum()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    image: String,
    boxes: Vec<Value>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    #[serde(rename = "class")]
    class_name: String,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

fn read_class(root: &Path, class_name: &str, options: &ScanOptions) -> Result<Vec<AnnotatedImage>, DatasetError> {
    let dir = root.join(class_name);
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let text = match fs::read_to_string(&ann_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DatasetError::Format { path: ann_path, message: "missing annotations file".into() })
        }
        Err(e) => return Err(DatasetError::Io { path: ann_path, source: e }),
    };
    let records: Vec<RawRecord> = serde_json::from_str(&text)
        .map_err(|e| DatasetError::Format { path: ann_path.clone(), message: e.to_string() })?;
    let mut out = Vec::with_capacity(records.len());
    for (index, rec) in records.into_iter().enumerate() {
        let invalid = |message: String| DatasetError::Validation { path: ann_path.clone(), index, message };
        for key in rec.extra.keys() {
            warn!("{}: record {index}: ignoring unknown key {key:?}", ann_path.display());
        }
        if rec.image.is_empty() || rec.image.contains(['/', '\\']) || rec.image == ".." {
            return Err(invalid(format!("image name {:?} must be a plain file name", rec.image)));
        }
        let path = dir.join(IMAGES_DIR).join(&rec.image);
        let (width, height) = imageio::dimensions(&path)
            .map_err(|e| DatasetError::Image { path: path.clone(), message: e.message })?;
        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for (bi, raw) in rec.boxes.into_iter().enumerate() {
            let b: RawBox = serde_json::from_value(raw).map_err(|e| invalid(format!("box {bi}: {e}")))?;
            for key in b.extra.keys() {
                warn!("{}: record {index} box {bi}: ignoring unknown key {key:?}", ann_path.display());
            }
            if b.x < 0 || b.y < 0 {
                return Err(invalid(format!("box {bi} has a negative origin ({}, {})", b.x, b.y)));
            }
            if b.w < options.min_box_px as i64 || b.h < options.min_box_px as i64 {
                return Err(invalid(format!(
                    "box {bi} is {}x{}, smaller than the {}px minimum",
                    b.w, b.h, options.min_box_px
                )));
            }
            if b.x + b.w > width as i64 || b.y + b.h > height as i64 {
                return Err(invalid(format!(
                    "box {bi} ({}, {}, {}, {}) exceeds the {width}x{height} image",
                    b.x, b.y, b.w, b.h
                )));
            }
            boxes.push(AnnotatedBox { x: b.x as u32, y: b.y as u32, w: b.w as u32, h: b.h as u32, class_name: b.class_name });
        }
        out.push(AnnotatedImage { path, width, height, boxes });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Scan and validate a dataset root. Every subdirectory is a class.
pub fn scan(root: &Path, options: ScanOptions) -> Result<DatasetIndex, DatasetError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.file_type().map_err(io_err(root))?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    let mut classes = BTreeMap::new();
    for name in names {
        let images = read_class(root, &name, &options)?;
        classes.insert(name, images);
    }
    Ok(DatasetIndex { root: root.to_path_buf(), classes, options })
}

/// Seeded sample without replacement over the images of every class other
/// than `exclude`. Asking for more than exist returns all of them.
pub fn sample_negatives_from<'a>(
    images_by_class: impl IntoIterator<Item = (&'a str, Vec<&'a AnnotatedImage>)>,
    exclude: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<&'a AnnotatedImage>, DatasetError> {
    let mut pool = Vec::new();
    let mut others = 0;
    for (class_name, images) in images_by_class {
        if class_name != exclude {
            others += 1;
            pool.extend(images.into_iter().filter(|img| img.boxes.iter().all(|b| b.class_name != exclude)));
        }
    }
    if others == 0 {
        return Err(DatasetError::Data(format!("no classes other than {exclude:?} to draw negatives from")));
    }
    if count > pool.len() {
        warn!("requested {count} negatives but only {} images are available; using all", pool.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(count);
    Ok(pool)
}

/// Negatives for `class_name` drawn from one split of an index.
pub fn sample_split_negatives<'a>(
    index: &'a DatasetIndex,
    split: Split,
    class_name: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<&'a AnnotatedImage>, DatasetError> {
    let by_class = index.classes.iter().map(|(c, imgs)| {
        (c.as_str(), imgs.iter().filter(|i| index.split_of(c, i) == split).collect::<Vec<_>>())
    });
    sample_negatives_from(by_class, class_name, count, seed)
}

/// Negatives for `exclude` drawn from the whole index.
pub fn sample_negatives<'a>(
    index: &'a DatasetIndex,
    exclude: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<&'a AnnotatedImage>, DatasetError> {
    let by_class = index.classes.iter().map(|(c, imgs)| (c.as_str(), imgs.iter().collect::<Vec<_>>()));
    sample_negatives_from(by_class, exclude, count, seed)
}

#[derive(Serialize)]
struct OutRecord<'a> {
    image: String,
    boxes: &'a [AnnotatedBox],
}

/// Write `root/<class>/annotations.json` for images already placed under
/// `root/<class>/images/`.
pub fn write_annotations(root: &Path, class_name: &str, images: &[AnnotatedImage]) -> Result<(), DatasetError> {
    let dir = root.join(class_name);
    fs::create_dir_all(dir.join(IMAGES_DIR)).map_err(io_err(&dir))?;
    let records: Vec<OutRecord> = images.iter().map(|i| OutRecord { image: i.file_name(), boxes: &i.boxes }).collect();
    let path = dir.join(ANNOTATIONS_FILE);
    let text = serde_json::to_string_pretty(&records).expect("annotations serialize");
    fs::write(&path, text).map_err(io_err(&path))
}

/// One object from a PASCAL/ImageNet-style XML annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct XmlObject {
    pub name: String,
    pub bbox: BBox,
}

fn child<'a, 'i>(parent: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    parent.children().find(|c| c.has_tag_name(tag))
}

/// Parse the `<object>` boxes of a PASCAL/ImageNet-style XML annotation.
/// Corner coordinates become `(x, y, w, h)`.
pub fn parse_imagenet_xml(text: &str, path: &Path) -> Result<Vec<XmlObject>, DatasetError> {
    let format = |message: String| DatasetError::Format { path: path.to_path_buf(), message };
    let doc = roxmltree::Document::parse(text).map_err(|e| format(e.to_string()))?;
    let at = |node: roxmltree::Node| {
        let pos = doc.text_pos_at(node.range().start);
        format!("line {}, column {}", pos.row, pos.col)
    };
    let mut out = Vec::new();
    for obj in doc.descendants().filter(|n| n.has_tag_name("object")) {
        let name = child(obj, "name")
            .and_then(|n| n.text())
            .map(|t| t.trim().to_string())
            .ok_or_else(|| format(format!("object without <name> at {}", at(obj))))?;
        let bndbox = child(obj, "bndbox").ok_or_else(|| format(format!("object without <bndbox> at {}", at(obj))))?;
        let coord = |tag: &str| -> Result<f64, DatasetError> {
            let node = child(bndbox, tag).ok_or_else(|| format(format!("<bndbox> without <{tag}> at {}", at(bndbox))))?;
            node.text()
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| format(format!("<{tag}> is not a number at {}", at(node))))
        };
        let (x0, y0, x1, y1) = (coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?);
        if x1 < x0 || y1 < y0 {
            return Err(format(format!("inverted box at {}", at(bndbox))));
        }
        out.push(XmlObject { name, bbox: BBox::new(x0, y0, x1 - x0, y1 - y0) });
    }
    Ok(out)
}

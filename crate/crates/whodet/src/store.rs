//! Model and background-statistics files, and the model catalogue.
//!
//! Model layout: `WHODETMX`, u32 version, u32 header length, JSON header,
//! little-endian f64 weights for each component in order, then the SHA-256
//! of everything before it. Statistics layout: `WHOBGSTS`, u32 version,
//! u32 cell size, u32 max offset, u64 cell count, 31 mean values, then the
//! stored autocorrelation blocks, all little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use whodet_core::background::FeatureConfig;
use whodet_core::learn::LearnParams;
use whodet_core::mixture::{Component, Mixture, Provenance};
use whodet_core::{BackgroundStats, HOG_CHANNELS};

pub const MODEL_MAGIC: &[u8; 8] = b"WHODETMX";
pub const MODEL_VERSION: u32 = 1;
pub const STATS_MAGIC: &[u8; 8] = b"WHOBGSTS";
pub const STATS_VERSION: u32 = 1;
pub const MODEL_EXTENSION: &str = "whodet";
pub const CATALOGUE_FILE: &str = "catalogue.json";
const DIGEST_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("corrupted file: {0}")]
    Corruption(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unknown model id {0:?}")]
    UnknownModel(String),
    #[error(transparent)]
    Core(#[from] whodet_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Serialize, Deserialize)]
struct ComponentHeader {
    rows: usize,
    cols: usize,
    bias: f64,
    provenance: Provenance,
    sample_count: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    class_name: String,
    cell_size: usize,
    biases_stale: bool,
    params: LearnParams,
    components: Vec<ComponentHeader>,
}

/// Hex SHA-256 digest.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_mixture(mixture: &Mixture) -> Result<Vec<u8>, StoreError> {
    if mixture.components.iter().any(|c| !c.bias.is_finite()) {
        return Err(StoreError::Format("biases must be finite to be stored".into()));
    }
    let header = ModelHeader {
        class_name: mixture.class_name.clone(),
        cell_size: mixture.cell_size,
        biases_stale: mixture.biases_stale,
        params: mixture.params.clone(),
        components: mixture
            .components
            .iter()
            .map(|c| ComponentHeader {
                rows: c.rows,
                cols: c.cols,
                bias: c.bias,
                provenance: c.provenance,
                sample_count: c.sample_count,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("model header serializes");
    let weights: usize = mixture.components.iter().map(|c| c.weights.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * weights + DIGEST_LEN);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for c in &mixture.components {
        for w in &c.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.bytes.len() - self.pos < n {
            return Err(StoreError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_mixture(bytes: &[u8]) -> Result<Mixture, StoreError> {
    if bytes.len() < 16 + DIGEST_LEN || &bytes[..8] != MODEL_MAGIC {
        return Err(StoreError::Format("not a model file".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(StoreError::Version { found: version, supported: MODEL_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(StoreError::Corruption("content digest does not match".into()));
    }
    r.bytes = body;
    let header_len = r.u32()? as usize;
    let header: ModelHeader = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| StoreError::Format(format!("model header: {e}")))?;
    let mut components = Vec::with_capacity(header.components.len());
    for h in header.components {
        let n = h
            .rows
            .checked_mul(h.cols)
            .and_then(|v| v.checked_mul(HOG_CHANNELS))
            .ok_or_else(|| StoreError::Format("component dimensions overflow".into()))?;
        let weights = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let mut c = Component::new(h.rows, h.cols, weights, h.provenance, h.sample_count)?;
        c.bias = h.bias;
        components.push(c);
    }
    if r.pos != body.len() {
        return Err(StoreError::Format(format!("{} trailing bytes after weights", body.len() - r.pos)));
    }
    if components.is_empty() {
        return Err(StoreError::Format("model has no components".into()));
    }
    Ok(Mixture {
        class_name: header.class_name,
        cell_size: header.cell_size,
        components,
        params: header.params,
        biases_stale: header.biases_stale,
    })
}

/// Write a model file atomically; returns its hex digest.
pub fn save_mixture(mixture: &Mixture, path: &Path) -> Result<String, StoreError> {
    let bytes = encode_mixture(mixture)?;
    write_atomic(path, &bytes)?;
    Ok(hex_digest(&bytes[..bytes.len() - DIGEST_LEN]))
}

pub fn load_mixture(path: &Path) -> Result<Mixture, StoreError> {
    decode_mixture(&fs::read(path).map_err(io_err(path))?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn encode_stats(stats: &BackgroundStats) -> Result<Vec<u8>, StoreError> {
    let (Some(mean), Some(blocks)) = (stats.mean(), stats.stored_blocks()) else {
        return Err(StoreError::Core(whodet_core::Error::Config("statistics are not finalized".into())));
    };
    let mut out = Vec::with_capacity(36 + DIGEST_LEN + 8 * (HOG_CHANNELS + blocks.len() * HOG_CHANNELS * HOG_CHANNELS));
    out.extend_from_slice(STATS_MAGIC);
    out.extend_from_slice(&STATS_VERSION.to_le_bytes());
    out.extend_from_slice(&(stats.config().cell_size as u32).to_le_bytes());
    out.extend_from_slice(&(stats.max_offset() as u32).to_le_bytes());
    out.extend_from_slice(&stats.cell_count().to_le_bytes());
    for v in mean.iter().chain(blocks.iter().flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_stats(bytes: &[u8]) -> Result<BackgroundStats, StoreError> {
    if bytes.len() < 12 + DIGEST_LEN || &bytes[..8] != STATS_MAGIC {
        return Err(StoreError::Format("not a background statistics file".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32()?;
    if version != STATS_VERSION {
        return Err(StoreError::Version { found: version, supported: STATS_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(StoreError::Corruption("content digest does not match".into()));
    }
    let bytes = body;
    r.bytes = body;
    let cell_size = r.u32()? as usize;
    let max_offset = r.u32()? as usize;
    let cell_count = r.u64()?;
    let mut mean = [0.0; HOG_CHANNELS];
    for m in &mut mean {
        *m = r.f64()?;
    }
    let offsets = (2 * max_offset + 1) * (max_offset + 1);
    let expected = offsets * HOG_CHANNELS * HOG_CHANNELS * 8;
    if bytes.len() - r.pos != expected {
        return Err(StoreError::Format(format!(
            "expected {expected} bytes of blocks for max offset {max_offset}, found {}",
            bytes.len() - r.pos
        )));
    }
    let blocks = (0..offsets)
        .map(|_| (0..HOG_CHANNELS * HOG_CHANNELS).map(|_| r.f64()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BackgroundStats::from_parts(FeatureConfig { cell_size }, max_offset, cell_count, mean, blocks)?)
}

pub fn save_stats(stats: &BackgroundStats, path: &Path) -> Result<(), StoreError> {
    write_atomic(path, &encode_stats(stats)?)
}

pub fn load_stats(path: &Path) -> Result<BackgroundStats, StoreError> {
    decode_stats(&fs::read(path).map_err(io_err(path))?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogueEntry {
    pub id: String,
    pub class_name: String,
    pub path: PathBuf,
    pub component_count: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub digest: String,
}

/// Index of registered model files, persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalogue {
    #[serde(skip)]
    file: PathBuf,
    entries: BTreeMap<String, CatalogueEntry>,
}

const ID_LEN: usize = 12;

impl Catalogue {
    /// Open the catalogue stored at `file`, or an empty one if it does not
    /// exist yet.
    pub fn open(file: &Path) -> Result<Catalogue, StoreError> {
        let mut cat = match fs::read(file) {
            Ok(bytes) => serde_json::from_slice::<Catalogue>(&bytes)
                .map_err(|e| StoreError::Format(format!("{}: {e}", file.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Catalogue::default(),
            Err(e) => return Err(StoreError::Io { path: file.to_path_buf(), source: e }),
        };
        cat.file = file.to_path_buf();
        Ok(cat)
    }

    /// Catalogue in `dir/catalogue.json`.
    pub fn open_dir(dir: &Path) -> Result<Catalogue, StoreError> {
        Catalogue::open(&dir.join(CATALOGUE_FILE))
    }

    pub fn file(&self) -> &Path {
        &self.file
    }

    fn persist(&self) -> Result<(), StoreError> {
        if let Some(parent) = self.file.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
        }
        let text = serde_json::to_vec_pretty(self).expect("catalogue serializes");
        write_atomic(&self.file, &text)
    }

    /// Register a model file. Ids derive from the content digest, so
    /// registering identical content again returns the existing id.
    pub fn register(&mut self, path: &Path) -> Result<String, StoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let mixture = decode_mixture(&bytes)?;
        let digest = hex_digest(&bytes[..bytes.len() - DIGEST_LEN]);
        if let Some(e) = self.entries.values().find(|e| e.digest == digest) {
            return Ok(e.id.clone());
        }
        let id = digest[..ID_LEN].to_string();
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.entries.insert(
            id.clone(),
            CatalogueEntry {
                id: id.clone(),
                class_name: mixture.class_name.clone(),
                path: path.to_path_buf(),
                component_count: mixture.len(),
                created_at,
                digest,
            },
        );
        self.persist()?;
        Ok(id)
    }

    /// Entries sorted by class name, then creation time, then id.
    pub fn list(&self) -> Vec<&CatalogueEntry> {
        let mut v: Vec<&CatalogueEntry> = self.entries.values().collect();
        v.sort_by(|a, b| (&a.class_name, a.created_at, &a.id).cmp(&(&b.class_name, b.created_at, &b.id)));
        v
    }

    pub fn get(&self, id: &str) -> Option<&CatalogueEntry> {
        self.entries.get(id)
    }

    /// Look up by id, or by path when `key` names a registered file.
    pub fn resolve(&self, key: &str) -> Option<&CatalogueEntry> {
        self.entries.get(key).or_else(|| self.entries.values().find(|e| e.path == Path::new(key)))
    }

    pub fn load(&self, id: &str) -> Result<Mixture, StoreError> {
        let entry = self.get(id).ok_or_else(|| StoreError::UnknownModel(id.into()))?;
        load_mixture(&entry.path)
    }

    pub fn unregister(&mut self, id: &str) -> Result<CatalogueEntry, StoreError> {
        let e = self.entries.remove(id).ok_or_else(|| StoreError::UnknownModel(id.into()))?;
        self.persist()?;
        Ok(e)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Save `mixture` into `dir` under a digest-derived name and register it.
/// Returns the model id.
pub fn store_in(catalogue: &mut Catalogue, dir: &Path, mixture: &Mixture) -> Result<String, StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let bytes = encode_mixture(mixture)?;
    let digest = hex_digest(&bytes[..bytes.len() - DIGEST_LEN]);
    let path = dir.join(format!("{}.{MODEL_EXTENSION}", &digest[..ID_LEN]));
    if !path.exists() {
        write_atomic(&path, &bytes)?;
    }
    catalogue.register(&path)
}

//! HTTP/JSON API over the model catalogue, background jobs and detection.
//!
//! Learning, optimization and adaptation run as jobs on one worker thread
//! in submission order. Requests keep being served while a job runs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use whodet_core::detect::{detect, DetectConfig};
use whodet_core::harmony::HsParams;
use whodet_core::hog::{render_weight_glyph, DEFAULT_GLYPH_PX};
use whodet_core::learn::LearnParams;
use whodet_core::{BBox, BackgroundStats, Image, Mixture};

use crate::cli::{find_images, summarize, ModelSummary};
use crate::dataset::{sample_split_negatives, scan, DatasetError, ScanOptions, Split};
use crate::error::{AppError, AppResult};
use crate::imageio;
use crate::pipeline;
use crate::store::{self, Catalogue, CatalogueEntry, StoreError};
use crate::workflow::{self, ClassData, DetectionRecord, OptimizeOptions, TrainingSet};

const BODY_LIMIT: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub models_dir: PathBuf,
    pub datasets_dir: PathBuf,
    /// Background statistics file; computed from the datasets when absent.
    pub stats_path: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub scan: ScanOptions,
    pub cell_size: usize,
    pub max_offset: usize,
    pub learn: LearnParams,
    pub detect: DetectConfig,
    pub hs: HsParams,
    pub neg_ratio: f64,
}

impl ServiceConfig {
    pub fn new(models_dir: impl Into<PathBuf>, datasets_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            models_dir: models_dir.into(),
            datasets_dir: datasets_dir.into(),
            stats_path: None,
            static_dir: None,
            scan: ScanOptions::default(),
            cell_size: whodet_core::hog::DEFAULT_CELL_SIZE,
            max_offset: 10,
            learn: LearnParams::default(),
            detect: DetectConfig::default(),
            hs: HsParams::default(),
            neg_ratio: 2.0,
        }
    }
}

/// Error body `{code, message}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, code, message)
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code, message: &self.message })).into_response()
    }
}

fn core_error(e: &whodet_core::Error) -> ApiError {
    use whodet_core::Error as E;
    let message = e.to_string();
    match e {
        E::LastComponent => ApiError::new(StatusCode::CONFLICT, "LastComponentError", message),
        E::Index { .. } => ApiError::not_found("IndexError", message),
        E::Numerical(_) => ApiError::internal(message).with_code("NumericalError"),
        E::Data(_) | E::EmptyStats => ApiError::unprocessable("DataError", message),
        E::Size(_) => ApiError::unprocessable("SizeError", message),
        E::Config(_) | E::Bounds(_) => ApiError::unprocessable("ConfigError", message),
        E::Cluster(_) => ApiError::unprocessable("ClusterError", message),
    }
}

impl ApiError {
    fn with_code(mut self, code: &'static str) -> Self {
        self.code = code;
        self
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        let message = e.to_string();
        match &e {
            AppError::Usage(_) => ApiError::new(StatusCode::BAD_REQUEST, "UsageError", message),
            AppError::Dataset(d) => match d {
                DatasetError::Format { .. } => ApiError::unprocessable("FormatError", message),
                DatasetError::Validation { .. } => ApiError::unprocessable("ValidationError", message),
                DatasetError::Image { .. } => ApiError::unprocessable("ImageError", message),
                DatasetError::Data(_) => ApiError::unprocessable("DataError", message),
                DatasetError::Io { .. } => ApiError::internal(message),
            },
            AppError::Store(s) => match s {
                StoreError::UnknownModel(_) => ApiError::not_found("UnknownModel", message),
                StoreError::Version { .. } => ApiError::internal(message).with_code("VersionError"),
                StoreError::Corruption(_) => ApiError::internal(message).with_code("CorruptionError"),
                StoreError::Format(_) => ApiError::internal(message).with_code("FormatError"),
                StoreError::Core(c) => core_error(c),
                StoreError::Io { .. } => ApiError::internal(message),
            },
            AppError::Image(_) => ApiError::unprocessable("ImageError", message),
            AppError::Core(c) => core_error(c),
            AppError::Io { .. } => ApiError::internal(message),
        }
    }
}

macro_rules! impl_from_app {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                AppError::from(e).into()
            }
        }
    )*};
}
impl_from_app!(StoreError, DatasetError, whodet_core::Error, imageio::ImageIoError);

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Learn,
    Optimize,
    Adapt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    /// Model id when done, error message when failed.
    pub result: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
struct LearnRequest {
    class: String,
    k_ar: Option<usize>,
    k_who: Option<usize>,
    seed: Option<u64>,
    lambda: Option<f64>,
    neg_ratio: Option<f64>,
    optimize: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
struct OptimizeRequest {
    model_id: String,
    seed: Option<u64>,
    neg_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
struct AdaptRequest {
    model_id: String,
    k_ar: usize,
    k_who: usize,
    seed: u64,
    neg_ratio: Option<f64>,
    images: Vec<Image>,
    boxes: Vec<Vec<BBox>>,
}

enum Work {
    Learn(LearnRequest),
    Optimize(OptimizeRequest),
    Adapt(AdaptRequest),
}

/// State shared by request handlers and the job worker.
pub struct Service {
    config: ServiceConfig,
    catalogue: RwLock<Catalogue>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
    queue: Mutex<Option<mpsc::Sender<(u64, Work)>>>,
    stats: Mutex<Option<Arc<BackgroundStats>>>,
}

impl Service {
    /// Open the catalogue, load the statistics if a file is configured
    /// and start the job worker.
    pub fn start(config: ServiceConfig) -> AppResult<Arc<Service>> {
        for dir in [&config.models_dir, &config.datasets_dir] {
            if !dir.is_dir() {
                return Err(AppError::Usage(format!("{} is not a directory", dir.display())));
            }
        }
        let catalogue = Catalogue::open_dir(&config.models_dir)?;
        let stats = match &config.stats_path {
            Some(p) => Some(Arc::new(store::load_stats(p)?)),
            None => None,
        };
        let (tx, rx) = mpsc::channel();
        let service = Arc::new(Service {
            config,
            catalogue: RwLock::new(catalogue),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            queue: Mutex::new(Some(tx)),
            stats: Mutex::new(stats),
        });
        let worker = Arc::downgrade(&service);
        std::thread::Builder::new()
            .name("whodet-jobs".into())
            .spawn(move || {
                while let Ok((id, work)) = rx.recv() {
                    let Some(service) = worker.upgrade() else { break };
                    service.run_job(id, work);
                }
            })
            .map_err(AppError::io("<job worker>"))?;
        Ok(service)
    }

    /// Stop accepting jobs; the worker exits after the current one.
    pub fn shutdown(&self) {
        self.queue.lock().unwrap().take();
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        let n: u64 = id.parse().ok()?;
        self.jobs.lock().unwrap().get(&n).cloned()
    }

    fn submit(&self, kind: JobKind, work: Work) -> ApiResult<Job> {
        let n = self.next_job.fetch_add(1, Ordering::Relaxed);
        let job = Job { id: n.to_string(), kind, state: JobState::Queued, progress: 0.0, result: None };
        self.jobs.lock().unwrap().insert(n, job.clone());
        let queue = self.queue.lock().unwrap();
        let sent = queue.as_ref().is_some_and(|tx| tx.send((n, work)).is_ok());
        if !sent {
            self.finish(n, Err("service is shutting down".into()));
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "ShuttingDown", "service is shutting down"));
        }
        info!("queued {kind:?} job {n}");
        Ok(job)
    }

    fn update(&self, n: u64, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(&n) {
            f(job);
        }
    }

    fn set_progress(&self, n: u64, p: f64) {
        self.update(n, |job| {
            if job.state == JobState::Running {
                job.progress = job.progress.max(p.clamp(0.0, 1.0));
            }
        })
    }

    fn finish(&self, n: u64, outcome: Result<String, String>) {
        self.update(n, |job| {
            match outcome {
                Ok(id) => {
                    job.state = JobState::Done;
                    job.progress = 1.0;
                    job.result = Some(id);
                }
                Err(message) => {
                    job.state = JobState::Failed;
                    job.result = Some(message);
                }
            }
        })
    }

    fn run_job(&self, n: u64, work: Work) {
        self.update(n, |job| job.state = JobState::Running);
        let progress = |p: f64| self.set_progress(n, p);
        let outcome = match work {
            Work::Learn(r) => self.learn_job(&r, &progress),
            Work::Optimize(r) => self.optimize_job(&r, &progress),
            Work::Adapt(r) => self.adapt_job(r, &progress),
        };
        match &outcome {
            Ok(id) => info!("job {n} done: model {id}"),
            Err(e) => warn!("job {n} failed: {e}"),
        }
        self.finish(n, outcome.map_err(|e| e.to_string()));
    }

    /// Background statistics, computed from every dataset image on first use.
    fn stats(&self) -> AppResult<Arc<BackgroundStats>> {
        let mut slot = self.stats.lock().unwrap();
        if let Some(s) = slot.as_ref() {
            return Ok(s.clone());
        }
        let files = find_images(&self.config.datasets_dir)?;
        info!("computing background statistics over {} images", files.len());
        let load = |p: &PathBuf| match imageio::load(p) {
            Ok(img) => Ok(Some(img)),
            Err(e) => {
                warn!("skipping {}: {e}", p.display());
                Ok(None)
            }
        };
        let c = &self.config;
        let stats = Arc::new(pipeline::compute_stats(&files, load, c.cell_size, c.max_offset, c.detect.interval)?);
        *slot = Some(stats.clone());
        Ok(stats)
    }

    fn store(&self, mixture: &Mixture) -> AppResult<String> {
        let mut cat = self.catalogue.write().unwrap();
        Ok(store::store_in(&mut cat, &self.config.models_dir, mixture)?)
    }

    fn load_model(&self, id: &str) -> AppResult<(CatalogueEntry, Mixture)> {
        let cat = self.catalogue.read().unwrap();
        let entry = cat.get(id).cloned().ok_or_else(|| StoreError::UnknownModel(id.into()))?;
        let mixture = store::load_mixture(&entry.path)?;
        Ok((entry, mixture))
    }

    fn options(&self, seed: u64) -> OptimizeOptions {
        OptimizeOptions { detect: self.config.detect, hs: HsParams { seed, ..self.config.hs.clone() } }
    }

    fn learn_job(&self, r: &LearnRequest, progress: workflow::Progress<'_>) -> AppResult<String> {
        let c = &self.config;
        let seed = r.seed.unwrap_or(c.learn.seed);
        let params = LearnParams {
            k_ar: r.k_ar.unwrap_or(c.learn.k_ar),
            k_who: r.k_who.unwrap_or(c.learn.k_who),
            lambda: r.lambda.unwrap_or(c.learn.lambda),
            seed,
            ..c.learn.clone()
        };
        let stats = self.stats()?;
        progress(0.1);
        let index = scan(&c.datasets_dir, c.scan)?;
        let data = workflow::class_data(&index, &r.class, Split::Train, r.neg_ratio.unwrap_or(c.neg_ratio), seed)?;
        progress(0.2);
        let opt = self.options(seed);
        let scaled = |p: f64| progress(0.2 + 0.8 * p);
        let optimize = r.optimize.unwrap_or(true).then_some(&opt);
        let trained = workflow::learn(&r.class, &data, &stats, &params, optimize, &scaled)?;
        self.store(&trained.mixture)
    }

    fn optimize_job(&self, r: &OptimizeRequest, progress: workflow::Progress<'_>) -> AppResult<String> {
        let c = &self.config;
        let (_, mixture) = self.load_model(&r.model_id)?;
        let seed = r.seed.unwrap_or(c.hs.seed);
        let index = scan(&c.datasets_dir, c.scan)?;
        let neg_ratio = r.neg_ratio.unwrap_or(c.neg_ratio);
        let data = workflow::class_data(&index, &mixture.class_name, Split::Train, neg_ratio, seed)?;
        progress(0.3);
        let scaled = |p: f64| progress(0.3 + 0.7 * p);
        let trained = workflow::optimize(&mixture, &data, &self.options(seed), &scaled)?;
        self.store(&trained.mixture)
    }

    fn adapt_job(&self, r: AdaptRequest, progress: workflow::Progress<'_>) -> AppResult<String> {
        let c = &self.config;
        let (_, base) = self.load_model(&r.model_id)?;
        let stats = self.stats()?;
        let index = scan(&c.datasets_dir, c.scan)?;
        let positives = TrainingSet::new(r.images, r.boxes);
        let count = workflow::negative_count(positives.box_count(), r.neg_ratio.unwrap_or(c.neg_ratio));
        let negatives = sample_split_negatives(&index, Split::Train, &base.class_name, count, r.seed)?;
        let data = ClassData { positives, negatives: workflow::load_images(&negatives)? };
        progress(0.2);
        let params = LearnParams { k_ar: r.k_ar, k_who: r.k_who, seed: r.seed, ..base.params.clone() };
        let scaled = |p: f64| progress(0.2 + 0.8 * p);
        let trained = workflow::adapt(&base, &data, &stats, &params, &self.options(r.seed), &scaled)?;
        self.store(&trained.mixture)
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

type Shared = State<Arc<Service>>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()))
}

fn parse_index(k: &str) -> ApiResult<usize> {
    k.parse().map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", format!("invalid component index {k:?}")))
}

fn multipart(m: Result<Multipart, MultipartRejection>) -> ApiResult<Multipart> {
    m.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.body_text()))
}

fn bad_multipart(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.body_text())
}

async fn list_models(State(s): Shared) -> Json<Vec<CatalogueEntry>> {
    let cat = s.catalogue.read().unwrap();
    Json(cat.list().into_iter().cloned().collect())
}

#[derive(Serialize)]
struct ModelDetail {
    #[serde(flatten)]
    summary: ModelSummary,
    glyph_urls: Vec<String>,
}

async fn get_model(State(s): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ModelDetail>> {
    let (entry, mixture) = blocking({
        let s = s.clone();
        move || Ok(s.load_model(&id)?)
    })
    .await?;
    let glyph_urls = (0..mixture.len()).map(|k| format!("/api/models/{}/components/{k}/glyph", entry.id)).collect();
    Ok(Json(ModelDetail { summary: summarize(&mixture, Some(entry)), glyph_urls }))
}

/// Remove a component: the edited copy is written as a new model file and
/// takes the old entry's place in the catalogue.
async fn remove_component(
    State(s): Shared,
    UrlPath((id, k)): UrlPath<(String, String)>,
) -> ApiResult<Json<ModelDetail>> {
    let k = parse_index(&k)?;
    let s2 = s.clone();
    let (entry, mixture) = blocking(move || {
        let (_, mixture) = s2.load_model(&id)?;
        let edited = mixture.remove_component(k)?;
        let mut cat = s2.catalogue.write().unwrap();
        if cat.get(&id).is_none() {
            return Err(StoreError::UnknownModel(id).into());
        }
        let new_id = store::store_in(&mut cat, &s2.config.models_dir, &edited)?;
        if new_id != id {
            cat.unregister(&id)?;
        }
        let entry = cat.get(&new_id).cloned().expect("just registered");
        Ok((entry, edited))
    })
    .await?;
    let glyph_urls = (0..mixture.len()).map(|k| format!("/api/models/{}/components/{k}/glyph", entry.id)).collect();
    Ok(Json(ModelDetail { summary: summarize(&mixture, Some(entry)), glyph_urls }))
}

async fn glyph(State(s): Shared, UrlPath((id, k)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let k = parse_index(&k)?;
    let png = blocking(move || {
        let (_, mixture) = s.load_model(&id)?;
        let c = mixture
            .components
            .get(k)
            .ok_or(whodet_core::Error::Index { index: k, len: mixture.len() })?;
        let image = render_weight_glyph(&c.weights, c.rows, c.cols, DEFAULT_GLYPH_PX)?;
        Ok(imageio::encode_png(&image))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Serialize)]
struct DetectResponse {
    width: usize,
    height: usize,
    detections: Vec<DetectionRecord>,
}

async fn detect_image(
    State(s): Shared,
    UrlPath(id): UrlPath<String>,
    m: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<DetectResponse>> {
    let (_, mixture) = blocking({
        let s = s.clone();
        let id = id.clone();
        move || Ok(s.load_model(&id)?)
    })
    .await?;
    let mut m = multipart(m)?;
    let mut bytes = None;
    while let Some(field) = m.next_field().await.map_err(bad_multipart)? {
        let is_image = field.name() == Some("image") || field.file_name().is_some();
        let data = field.bytes().await.map_err(bad_multipart)?;
        if is_image {
            bytes = Some(data);
            break;
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::unprocessable("ImageError", "no image part in upload"))?;
    let config = s.config.detect;
    let response = blocking(move || {
        let image = imageio::decode(&bytes)?;
        let dets = detect(&image, &mixture, config)?;
        Ok(DetectResponse {
            width: image.width(),
            height: image.height(),
            detections: dets.iter().map(DetectionRecord::from).collect(),
        })
    })
    .await?;
    Ok(Json(response))
}

async fn list_jobs(State(s): Shared) -> Json<Vec<Job>> {
    Json(s.jobs.lock().unwrap().values().cloned().collect())
}

async fn get_job(State(s): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Job>> {
    s.job(&id).map(Json).ok_or_else(|| ApiError::not_found("UnknownJob", format!("unknown job id {id:?}")))
}

fn accepted(job: Job) -> Response {
    (StatusCode::ACCEPTED, Json(job)).into_response()
}

fn check_positive(name: &str, v: Option<usize>) -> ApiResult<()> {
    if v == Some(0) {
        return Err(ApiError::unprocessable("ValidationError", format!("{name} must be at least 1")));
    }
    Ok(())
}

fn check_ratio(v: Option<f64>) -> ApiResult<()> {
    if v.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
        return Err(ApiError::unprocessable("ValidationError", "neg_ratio must be positive"));
    }
    Ok(())
}

async fn submit_learn(State(s): Shared, body: Bytes) -> ApiResult<Response> {
    let r: LearnRequest = parse_json(&body)?;
    check_positive("k_ar", r.k_ar)?;
    check_positive("k_who", r.k_who)?;
    check_ratio(r.neg_ratio)?;
    if r.lambda.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
        return Err(ApiError::unprocessable("ValidationError", "lambda must be positive"));
    }
    let known = blocking({
        let s = s.clone();
        move || Ok(scan(&s.config.datasets_dir, s.config.scan)?.classes.into_keys().collect::<Vec<_>>())
    })
    .await?;
    if !known.contains(&r.class) {
        return Err(ApiError::unprocessable("UnknownClass", format!("no dataset class {:?}", r.class)));
    }
    Ok(accepted(s.submit(JobKind::Learn, Work::Learn(r))?))
}

async fn submit_optimize(State(s): Shared, body: Bytes) -> ApiResult<Response> {
    let r: OptimizeRequest = parse_json(&body)?;
    check_ratio(r.neg_ratio)?;
    if s.catalogue.read().unwrap().get(&r.model_id).is_none() {
        return Err(ApiError::not_found("UnknownModel", format!("unknown model id {:?}", r.model_id)));
    }
    Ok(accepted(s.submit(JobKind::Optimize, Work::Optimize(r))?))
}

/// Box drawn on an uploaded image, in pixels.
#[derive(Debug, Deserialize)]
struct UploadBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Deserialize)]
struct UploadRecord {
    image: String,
    boxes: Vec<UploadBox>,
}

fn field_number<T: std::str::FromStr>(name: &str, text: &str) -> ApiResult<T> {
    text.trim()
        .parse()
        .map_err(|_| ApiError::unprocessable("ValidationError", format!("{name}: cannot parse {text:?}")))
}

/// Multipart fields: `model_id`, `boxes` (JSON records
/// `[{"image": name, "boxes": [{x, y, w, h}]}]`), one file part per image,
/// and optional `k_ar`, `k_who`, `seed`, `neg_ratio`.
async fn submit_adapt(State(s): Shared, m: Result<Multipart, MultipartRejection>) -> ApiResult<Response> {
    let mut m = multipart(m)?;
    let mut model_id = None;
    let mut records: Option<Vec<UploadRecord>> = None;
    let mut files: Vec<(String, Bytes)> = Vec::new();
    let (mut k_ar, mut k_who, mut seed, mut neg_ratio) = (1, 1, 0, None);
    while let Some(field) = m.next_field().await.map_err(bad_multipart)? {
        let name = field.name().unwrap_or_default().to_string();
        if let Some(file_name) = field.file_name().map(str::to_string) {
            if name != "boxes" {
                files.push((file_name, field.bytes().await.map_err(bad_multipart)?));
                continue;
            }
        }
        let text = field.text().await.map_err(bad_multipart)?;
        match name.as_str() {
            "model_id" | "model" => model_id = Some(text.trim().to_string()),
            "boxes" => {
                records = Some(serde_json::from_str(&text).map_err(|e| {
                    ApiError::unprocessable("FormatError", format!("boxes: {e}"))
                })?)
            }
            "k_ar" => k_ar = field_number("k_ar", &text)?,
            "k_who" => k_who = field_number("k_who", &text)?,
            "seed" => seed = field_number("seed", &text)?,
            "neg_ratio" => neg_ratio = Some(field_number("neg_ratio", &text)?),
            other => warn!("ignoring multipart field {other:?}"),
        }
    }
    let model_id = model_id.ok_or_else(|| ApiError::unprocessable("ValidationError", "missing model_id"))?;
    let records = records.ok_or_else(|| ApiError::unprocessable("ValidationError", "missing boxes"))?;
    check_positive("k_ar", Some(k_ar))?;
    check_positive("k_who", Some(k_who))?;
    check_ratio(neg_ratio)?;
    if s.catalogue.read().unwrap().get(&model_id).is_none() {
        return Err(ApiError::not_found("UnknownModel", format!("unknown model id {model_id:?}")));
    }
    let min_box = s.config.scan.min_box_px as f64;
    let (images, boxes) = blocking(move || decode_uploads(files, records, min_box)).await?;
    let r = AdaptRequest { model_id, k_ar, k_who, seed, neg_ratio, images, boxes };
    Ok(accepted(s.submit(JobKind::Adapt, Work::Adapt(r))?))
}

fn decode_uploads(
    files: Vec<(String, Bytes)>,
    records: Vec<UploadRecord>,
    min_box: f64,
) -> ApiResult<(Vec<Image>, Vec<Vec<BBox>>)> {
    let mut by_name: BTreeMap<String, Bytes> = BTreeMap::new();
    for (name, bytes) in files {
        if by_name.insert(name.clone(), bytes).is_some() {
            return Err(ApiError::unprocessable("ValidationError", format!("image {name:?} uploaded twice")));
        }
    }
    let invalid = |index: usize, message: String| {
        ApiError::unprocessable("ValidationError", format!("boxes record {index}: {message}"))
    };
    let mut images = Vec::new();
    let mut boxes = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let bytes = by_name.get(&record.image).ok_or_else(|| invalid(index, format!("no uploaded image {:?}", record.image)))?;
        let image = imageio::decode(bytes).map_err(|e| ApiError::unprocessable("ImageError", format!("{}: {e}", record.image)))?;
        let (w, h) = (image.width() as f64, image.height() as f64);
        let mut list = Vec::new();
        for b in &record.boxes {
            if !(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= w && b.y + b.h <= h) {
                return Err(invalid(index, format!("box ({}, {}, {}, {}) outside the {w}x{h} image", b.x, b.y, b.w, b.h)));
            }
            if b.w < min_box || b.h < min_box {
                return Err(invalid(index, format!("box {}x{} is smaller than {min_box} px", b.w, b.h)));
            }
            list.push(BBox::new(b.x, b.y, b.w, b.h));
        }
        if !list.is_empty() {
            images.push(image);
            boxes.push(list);
        }
    }
    if boxes.is_empty() {
        return Err(ApiError::unprocessable("ValidationError", "no boxes drawn on the uploaded images"));
    }
    Ok((images, boxes))
}

#[derive(Serialize)]
struct DatasetClass {
    name: String,
    images: usize,
    boxes: usize,
    train_images: usize,
    test_images: usize,
}

async fn list_datasets(State(s): Shared) -> ApiResult<Json<Vec<DatasetClass>>> {
    let classes = blocking(move || {
        let index = scan(&s.config.datasets_dir, s.config.scan)?;
        let out = index
            .classes
            .iter()
            .map(|(name, images)| {
                let train = images.iter().filter(|i| index.split_of(name, i) == Split::Train).count();
                DatasetClass {
                    name: name.clone(),
                    images: images.len(),
                    boxes: images.iter().map(|i| i.boxes_of(name).count()).sum(),
                    train_images: train,
                    test_images: images.len() - train,
                }
            })
            .collect();
        Ok(out)
    })
    .await?;
    Ok(Json(classes))
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("NotFound", "no such endpoint")
}

pub fn router(service: Arc<Service>) -> Router {
    let static_dir = service.config.static_dir.clone();
    let api = Router::new()
        .route("/api/models", get(list_models))
        .route("/api/models/{id}", get(get_model))
        .route("/api/models/{id}/components/{k}", delete(remove_component))
        .route("/api/models/{id}/components/{k}/glyph", get(glyph))
        .route("/api/models/{id}/detect", post(detect_image))
        .route("/api/jobs", get(list_jobs))
        .route("/api/jobs/learn", post(submit_learn))
        .route("/api/jobs/optimize", post(submit_optimize))
        .route("/api/jobs/adapt", post(submit_adapt))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/datasets", get(list_datasets))
        .route("/api/{*rest}", axum::routing::any(api_not_found))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    info!("shutting down");
}

/// Bind `host:port` and serve until SIGINT or SIGTERM.
pub fn serve_blocking(host: &str, port: u16, config: ServiceConfig) -> AppResult<()> {
    let service = Service::start(config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(AppError::io("<runtime>"))?;
    let addr = format!("{host}:{port}");
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(AppError::io(&addr))?;
        info!("listening on http://{addr}");
        axum::serve(listener, router(service.clone()))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(AppError::io(&addr))
    })?;
    service.shutdown();
    Ok(())
}


//! `whodet` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use whodet_core::detect::{detect, DetectConfig};
use whodet_core::eval::DEFAULT_IOU;
use whodet_core::harmony::HsParams;
use whodet_core::learn::LearnParams;
use whodet_core::{BackgroundStats, Mixture};

use crate::dataset::{scan, DatasetIndex, ScanOptions, Split};
use crate::error::{AppError, AppResult, EXIT_OK, EXIT_USAGE};
use crate::imageio;
use crate::pipeline;
use crate::store::{self, Catalogue, CatalogueEntry};
use crate::workflow::{self, DetectionRecord, OptimizeOptions, Trained};

#[derive(Debug, Parser)]
#[command(name = "whodet", version, about = "Whitened HOG detectors: learn, tune, adapt and apply")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "WHODET_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gather background statistics from a corpus of images.
    Stats(StatsArgs),
    /// Learn a mixture for one class of a dataset.
    Learn(LearnArgs),
    /// Jointly optimize the biases of a model.
    Optimize(OptimizeArgs),
    /// Append in-situ components to a model and re-optimize its biases.
    Adapt(AdaptArgs),
    /// Run a model on one image.
    Detect(DetectArgs),
    /// Average precision of one or more models on a dataset split.
    Evaluate(EvaluateArgs),
    /// Inspect and edit stored models.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// HTTP API and web UI.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory searched recursively for PNG and JPEG images.
    #[arg(long, env = "WHODET_CORPUS")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "WHODET_MAX_OFFSET", default_value_t = 10)]
    pub max_offset: usize,
    #[arg(long, env = "WHODET_CELL_SIZE", default_value_t = 8)]
    pub cell_size: usize,
    #[arg(long, env = "WHODET_INTERVAL", default_value_t = 5)]
    pub interval: usize,
}

#[derive(Debug, Args, Clone)]
pub struct DatasetArgs {
    #[arg(long, env = "WHODET_DATASET")]
    pub dataset: PathBuf,
    #[arg(long)]
    pub class: String,
    #[arg(long, default_value = "train")]
    pub split: Split,
    /// Seed of the train/test split hash.
    #[arg(long, env = "WHODET_SPLIT_SEED", default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, env = "WHODET_TRAIN_RATIO", default_value_t = 0.8)]
    pub train_ratio: f64,
    /// Boxes smaller than this on either side are rejected.
    #[arg(long, default_value_t = 16)]
    pub min_box_px: u32,
    /// Negative images per positive box, drawn from other classes.
    #[arg(long, env = "WHODET_NEG_RATIO", default_value_t = 2.0)]
    pub neg_ratio: f64,
}

impl DatasetArgs {
    fn scan(&self) -> AppResult<DatasetIndex> {
        scan_dataset(&self.dataset, self.split_seed, self.train_ratio, self.min_box_px)
    }
}

#[derive(Debug, Args, Clone)]
pub struct LearnOpts {
    #[arg(long, env = "WHODET_K_AR", default_value_t = 2)]
    pub k_ar: usize,
    #[arg(long, env = "WHODET_K_WHO", default_value_t = 2)]
    pub k_who: usize,
    #[arg(long, env = "WHODET_LAMBDA", default_value_t = whodet_core::background::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, env = "WHODET_MIN_CLUSTER", default_value_t = 2)]
    pub min_cluster_size: usize,
    /// Largest template side in cells.
    #[arg(long, default_value_t = 15)]
    pub max_template: usize,
    #[arg(long, default_value_t = 4)]
    pub min_template: usize,
    #[arg(long, default_value_t = 40)]
    pub max_area_cells: usize,
    #[arg(long)]
    pub no_mirror: bool,
}

impl LearnOpts {
    fn params(&self, seed: u64) -> LearnParams {
        LearnParams {
            k_ar: self.k_ar,
            k_who: self.k_who,
            lambda: self.lambda,
            seed,
            mirror: !self.no_mirror,
            min_cluster_size: self.min_cluster_size,
            max_area_cells: self.max_area_cells,
            min_template: self.min_template,
            max_template: self.max_template,
            max_dimension: whodet_core::background::DEFAULT_MAX_DIMENSION.max(self.max_area_cells * whodet_core::HOG_CHANNELS),
        }
    }

    fn check(&self) -> AppResult<()> {
        usage_if(self.k_ar == 0 || self.k_who == 0, "--k-ar and --k-who must be at least 1")?;
        usage_if(!(self.lambda > 0.0 && self.lambda.is_finite()), "--lambda must be positive")?;
        usage_if(self.min_template == 0 || self.min_template > self.max_template, "need 1 <= --min-template <= --max-template")
    }
}

#[derive(Debug, Args, Clone)]
pub struct DetectOpts {
    #[arg(long, env = "WHODET_INTERVAL", default_value_t = 5)]
    pub interval: usize,
    #[arg(long, env = "WHODET_NMS_OVERLAP", default_value_t = 0.5)]
    pub nms_overlap: f64,
    #[arg(long, default_value_t = 100)]
    pub max_detections: usize,
}

impl DetectOpts {
    fn config(&self) -> AppResult<DetectConfig> {
        usage_if(self.interval == 0, "--interval must be at least 1")?;
        usage_if(!(self.nms_overlap > 0.0 && self.nms_overlap < 1.0), "--nms-overlap must lie in (0, 1)")?;
        Ok(DetectConfig { interval: self.interval, nms_overlap: self.nms_overlap, max_detections: self.max_detections })
    }
}

#[derive(Debug, Args, Clone)]
pub struct HsOpts {
    #[arg(long, default_value_t = 10)]
    pub hs_memory: usize,
    #[arg(long, default_value_t = 0.9)]
    pub hs_hmcr: f64,
    #[arg(long, default_value_t = 0.3)]
    pub hs_par: f64,
    #[arg(long, env = "WHODET_HS_ITERATIONS", default_value_t = 500)]
    pub hs_iterations: usize,
}

impl HsOpts {
    fn params(&self, seed: u64) -> AppResult<HsParams> {
        usage_if(self.hs_memory == 0, "--hs-memory must be at least 1")?;
        usage_if(!(0.0..=1.0).contains(&self.hs_hmcr) || !(0.0..=1.0).contains(&self.hs_par), "HS rates must lie in [0, 1]")?;
        Ok(HsParams {
            memory_size: self.hs_memory,
            memory_consider_rate: self.hs_hmcr,
            pitch_adjust_rate: self.hs_par,
            bandwidth: None,
            iterations: self.hs_iterations,
            seed,
        })
    }
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, env = "WHODET_STATS")]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "WHODET_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Also optimize the biases jointly, with leave-one-out positive scores.
    #[arg(long)]
    pub optimize: bool,
    /// Register the result in this model directory's catalogue.
    #[arg(long, env = "WHODET_MODELS")]
    pub models: Option<PathBuf>,
    #[command(flatten)]
    pub learn: LearnOpts,
    #[command(flatten)]
    pub detect: DetectOpts,
    #[command(flatten)]
    pub hs: HsOpts,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Model file or catalogue id.
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Output file; defaults to overwriting the input file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "WHODET_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "WHODET_MODELS")]
    pub models: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectOpts,
    #[command(flatten)]
    pub hs: HsOpts,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Model file or catalogue id.
    #[arg(long)]
    pub model: String,
    /// Dataset of in-situ images.
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, env = "WHODET_STATS")]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "WHODET_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "WHODET_MODELS")]
    pub models: Option<PathBuf>,
    #[command(flatten)]
    pub learn: LearnOpts,
    #[command(flatten)]
    pub detect: DetectOpts,
    #[command(flatten)]
    pub hs: HsOpts,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Model file or catalogue id.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub image: PathBuf,
    /// Write detections as JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "WHODET_MODELS")]
    pub models: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectOpts,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file or catalogue id; repeat for several classes.
    #[arg(long, required = true)]
    pub model: Vec<String>,
    #[arg(long, env = "WHODET_DATASET")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, env = "WHODET_SPLIT_SEED", default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, env = "WHODET_TRAIN_RATIO", default_value_t = 0.8)]
    pub train_ratio: f64,
    #[arg(long, default_value_t = 16)]
    pub min_box_px: u32,
    #[arg(long, default_value_t = DEFAULT_IOU)]
    pub iou: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "WHODET_MODELS")]
    pub models: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectOpts,
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Catalogue entries, sorted by class then creation time.
    List {
        #[arg(long, env = "WHODET_MODELS")]
        models: PathBuf,
    },
    /// Header and per-component summary of one model.
    Show {
        /// Model file or catalogue id.
        model: String,
        #[arg(long, env = "WHODET_MODELS")]
        models: Option<PathBuf>,
    },
    /// Add a model file to a catalogue.
    Register {
        path: PathBuf,
        #[arg(long, env = "WHODET_MODELS")]
        models: PathBuf,
    },
    /// Write a copy of a model without one component.
    RemoveComponent {
        /// Model file or catalogue id.
        model: String,
        #[arg(long)]
        index: usize,
        /// Output file; with a catalogue and no --out the copy is stored there.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "WHODET_MODELS")]
        models: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "WHODET_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "WHODET_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "WHODET_MODELS")]
    pub models: PathBuf,
    #[arg(long, env = "WHODET_DATASETS")]
    pub datasets: PathBuf,
    /// Background statistics; computed from the datasets when absent.
    #[arg(long, env = "WHODET_STATS")]
    pub stats: Option<PathBuf>,
    /// Directory of static web UI assets served at /.
    #[arg(long, env = "WHODET_STATIC")]
    pub static_dir: Option<PathBuf>,
    /// Offset range of statistics computed from the datasets.
    #[arg(long, env = "WHODET_MAX_OFFSET", default_value_t = 10)]
    pub max_offset: usize,
}

fn usage_if(cond: bool, message: &str) -> AppResult<()> {
    if cond {
        Err(AppError::Usage(message.into()))
    } else {
        Ok(())
    }
}

pub fn scan_dataset(root: &Path, split_seed: u64, train_ratio: f64, min_box_px: u32) -> AppResult<DatasetIndex> {
    usage_if(!(train_ratio > 0.0 && train_ratio < 1.0), "--train-ratio must lie in (0, 1)")?;
    Ok(scan(root, ScanOptions { min_box_px, split_seed, train_ratio })?)
}

/// Image files under `dir`, recursively, in sorted order.
pub fn find_images(dir: &Path) -> AppResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            AppError::Io { path, source: e.into() }
        })?;
        if entry.file_type().is_file() && imageio::is_image_path(entry.path()) {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn open_catalogue(models: Option<&Path>) -> AppResult<Option<Catalogue>> {
    models.map(|d| Catalogue::open_dir(d).map_err(AppError::from)).transpose()
}

/// Load a model by path, or by catalogue id when a catalogue is given.
fn load_model(key: &str, models: Option<&Path>) -> AppResult<(Mixture, PathBuf)> {
    let path = Path::new(key);
    if path.is_file() {
        return Ok((store::load_mixture(path)?, path.to_path_buf()));
    }
    if let Some(cat) = open_catalogue(models)? {
        if let Some(entry) = cat.resolve(key) {
            return Ok((store::load_mixture(&entry.path)?, entry.path.clone()));
        }
    }
    Err(store::StoreError::UnknownModel(key.into()).into())
}

fn save_model(mixture: &Mixture, out: &Path, models: Option<&Path>) -> AppResult<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(AppError::io(parent))?;
    }
    let digest = store::save_mixture(mixture, out)?;
    info!("wrote {} ({} components, digest {digest})", out.display(), mixture.len());
    if let Some(mut cat) = open_catalogue(models)? {
        let id = cat.register(out)?;
        info!("registered as {id}");
    }
    Ok(())
}

fn write_json(value: &impl Serialize, out: Option<&Path>) -> AppResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    match out {
        Some(path) => fs::write(path, text + "\n").map_err(AppError::io(path)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(AppError::io("<stdout>"))
        }
    }
}

fn report_joint(trained: &Trained) {
    if let Some(j) = &trained.joint {
        info!("biases {:?}: F1 {:.4} (independent {:.4})", j.biases, j.f1, j.independent_f1);
    }
}

fn run_stats(a: &StatsArgs) -> AppResult<()> {
    usage_if(a.cell_size < 2, "--cell-size must be at least 2")?;
    usage_if(a.interval == 0, "--interval must be at least 1")?;
    let files = find_images(&a.corpus)?;
    if files.is_empty() {
        return Err(AppError::Dataset(crate::dataset::DatasetError::Data(format!(
            "no images under {}",
            a.corpus.display()
        ))));
    }
    info!("{} corpus images", files.len());
    let load = |p: &PathBuf| match imageio::load(p) {
        Ok(img) => Ok(Some(img)),
        Err(e) => {
            warn!("skipping {}: {e}", p.display());
            Ok(None)
        }
    };
    let stats: BackgroundStats = pipeline::compute_stats(&files, load, a.cell_size, a.max_offset, a.interval)?;
    if stats.cell_count() == 0 {
        return Err(whodet_core::Error::Data("no pyramid level was large enough for the requested --max-offset".into()).into());
    }
    store::save_stats(&stats, &a.out)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn run_learn(a: &LearnArgs) -> AppResult<()> {
    a.learn.check()?;
    let config = a.detect.config()?;
    let hs = a.hs.params(a.seed)?;
    let stats = store::load_stats(&a.stats)?;
    let index = a.data.scan()?;
    let data = workflow::class_data(&index, &a.data.class, a.data.split, a.data.neg_ratio, a.seed)?;
    let params = a.learn.params(a.seed);
    let opt = a.optimize.then(|| OptimizeOptions { detect: config, hs });
    let trained = workflow::learn(&a.data.class, &data, &stats, &params, opt.as_ref(), &workflow::no_progress)?;
    report_joint(&trained);
    save_model(&trained.mixture, &a.out, a.models.as_deref())
}

fn run_optimize(a: &OptimizeArgs) -> AppResult<()> {
    let opt = OptimizeOptions { detect: a.detect.config()?, hs: a.hs.params(a.seed)? };
    let (mixture, path) = load_model(&a.model, a.models.as_deref())?;
    check_class(&mixture, &a.data.class)?;
    let index = a.data.scan()?;
    let data = workflow::class_data(&index, &a.data.class, a.data.split, a.data.neg_ratio, a.seed)?;
    let trained = workflow::optimize(&mixture, &data, &opt, &workflow::no_progress)?;
    report_joint(&trained);
    save_model(&trained.mixture, a.out.as_deref().unwrap_or(&path), a.models.as_deref())
}

fn check_class(mixture: &Mixture, class: &str) -> AppResult<()> {
    usage_if(
        mixture.class_name != class,
        &format!("model is for class {:?}, not {class:?}", mixture.class_name),
    )
}

fn run_adapt(a: &AdaptArgs) -> AppResult<()> {
    a.learn.check()?;
    let opt = OptimizeOptions { detect: a.detect.config()?, hs: a.hs.params(a.seed)? };
    let (base, _) = load_model(&a.model, a.models.as_deref())?;
    check_class(&base, &a.data.class)?;
    let stats = store::load_stats(&a.stats)?;
    let index = a.data.scan()?;
    let data = workflow::class_data(&index, &a.data.class, a.data.split, a.data.neg_ratio, a.seed)?;
    let params = a.learn.params(a.seed);
    let trained = workflow::adapt(&base, &data, &stats, &params, &opt, &workflow::no_progress)?;
    report_joint(&trained);
    save_model(&trained.mixture, &a.out, a.models.as_deref())
}

fn run_detect(a: &DetectArgs) -> AppResult<()> {
    let config = a.detect.config()?;
    let (mixture, _) = load_model(&a.model, a.models.as_deref())?;
    let image = imageio::load(&a.image)?;
    let dets = detect(&image, &mixture, config)?;
    let records: Vec<DetectionRecord> = dets.iter().map(DetectionRecord::from).collect();
    info!("{} detection(s)", records.len());
    write_json(&records, a.out.as_deref())
}

fn run_evaluate(a: &EvaluateArgs) -> AppResult<()> {
    let config = a.detect.config()?;
    usage_if(!(a.iou > 0.0 && a.iou <= 1.0), "--iou must lie in (0, 1]")?;
    let mixtures =
        a.model.iter().map(|m| load_model(m, a.models.as_deref()).map(|(m, _)| m)).collect::<AppResult<Vec<_>>>()?;
    let index = scan_dataset(&a.dataset, a.split_seed, a.train_ratio, a.min_box_px)?;
    let refs: Vec<&Mixture> = mixtures.iter().collect();
    let report = workflow::evaluate_split(&refs, &index, a.split, config, a.iou)?;
    match report.mean_ap {
        Some(map) => info!("mAP {map:.4}"),
        None => warn!("no class with ground truth in the {} split", a.split),
    }
    write_json(&report, a.out.as_deref())
}

#[derive(Serialize)]
pub struct ComponentSummary {
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub bias: f64,
    pub provenance: whodet_core::Provenance,
    pub sample_count: usize,
}

#[derive(Serialize)]
pub struct ModelSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry: Option<CatalogueEntry>,
    pub class_name: String,
    pub cell_size: usize,
    pub biases_stale: bool,
    pub params: LearnParams,
    pub components: Vec<ComponentSummary>,
}

pub fn summarize(mixture: &Mixture, entry: Option<CatalogueEntry>) -> ModelSummary {
    ModelSummary {
        entry,
        class_name: mixture.class_name.clone(),
        cell_size: mixture.cell_size,
        biases_stale: mixture.biases_stale,
        params: mixture.params.clone(),
        components: mixture
            .components
            .iter()
            .enumerate()
            .map(|(index, c)| ComponentSummary {
                index,
                rows: c.rows,
                cols: c.cols,
                bias: c.bias,
                provenance: c.provenance,
                sample_count: c.sample_count,
            })
            .collect(),
    }
}

fn run_model(cmd: &ModelCommand) -> AppResult<()> {
    match cmd {
        ModelCommand::List { models } => {
            let cat = Catalogue::open_dir(models)?;
            write_json(&cat.list(), None)
        }
        ModelCommand::Show { model, models } => {
            let (mixture, path) = load_model(model, models.as_deref())?;
            let entry = open_catalogue(models.as_deref())?
                .and_then(|c| c.resolve(model).or_else(|| c.resolve(&path.to_string_lossy())).cloned());
            write_json(&summarize(&mixture, entry), None)
        }
        ModelCommand::Register { path, models } => {
            let mut cat = Catalogue::open_dir(models)?;
            let id = cat.register(path)?;
            println!("{id}");
            Ok(())
        }
        ModelCommand::RemoveComponent { model, index, out, models } => {
            usage_if(out.is_none() && models.is_none(), "remove-component needs --out or --models")?;
            let (mixture, _) = load_model(model, models.as_deref())?;
            let edited = mixture.remove_component(*index)?;
            match (out, models) {
                (Some(out), _) => save_model(&edited, out, models.as_deref()),
                (None, Some(dir)) => {
                    let mut cat = Catalogue::open_dir(dir)?;
                    let id = store::store_in(&mut cat, dir, &edited)?;
                    println!("{id}");
                    Ok(())
                }
                (None, None) => unreachable!("checked above"),
            }
        }
    }
}

fn run_serve(a: &ServeArgs) -> AppResult<()> {
    let config = crate::service::ServiceConfig {
        stats_path: a.stats.clone(),
        static_dir: a.static_dir.clone(),
        max_offset: a.max_offset,
        ..crate::service::ServiceConfig::new(&a.models, &a.datasets)
    };
    crate::service::serve_blocking(&a.host, a.port, config)
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    let env = env_logger::Env::default().filter_or("WHODET_LOG", level);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

pub fn execute(cli: &Cli) -> AppResult<()> {
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            warn!("thread pool already configured: {e}");
        }
    }
    match &cli.command {
        Command::Stats(a) => run_stats(a),
        Command::Learn(a) => run_learn(a),
        Command::Optimize(a) => run_optimize(a),
        Command::Adapt(a) => run_adapt(a),
        Command::Detect(a) => run_detect(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Model { command } => run_model(command),
        Command::Serve(a) => run_serve(a),
    }
}

/// Parse `argv`, run, and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&cli);
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

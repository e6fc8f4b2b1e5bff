//! Command implementations behind the `gscls` binary. Each command writes
//! its outputs into a staging directory next to `--out` and renames it into
//! place once everything is written.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use gscls_core::autodiff::{AdamConfig, Checkpoint, CheckpointError};
use gscls_core::classifier::{
    build_model, train_with_progress, ClassifierConfig, ClassifierError, ClassifierModel, Preset, SampleSource,
    TrainConfig,
};
use gscls_core::datasets::{
    load_cloud, load_dataset, read_manifest, split, synth_generate, write_synth, DatasetError,
    DatasetManifest, Split, SynthSpec, MANIFEST_FILE,
};
use gscls_core::embedding::{
    read_embedding_csv, silhouette_score, tsne, write_embedding_csv, EmbeddingError, EmbeddingRow, TsneConfig,
};
use gscls_core::evaluation::{compare_modes, evaluate, EvalError, EvalReport};
use gscls_core::geometry::{anisotropy_stats, FeatureMode, FeatureOptions, GeometryError, HISTOGRAM_BINS};
use gscls_core::gs_ply::{activate, parse_ply, PlyError};
use gscls_core::pipeline::{CloudSet, SamplingPolicy};
use gscls_core::plot::{heatmap_svg, scatter_svg, PlotError};
use gscls_core::sampling::DEFAULT_POINTS;

pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAINING_LOG_FILE: &str = "training_log.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const PROB_CSV_FILE: &str = "prob_matrix.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const TSNE_FILE: &str = "tsne.json";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const COMPARISON_TEXT_FILE: &str = "comparison.txt";
pub const SCATTER_FILE: &str = "scatter.svg";
pub const HEATMAP_FILE: &str = "heatmap.svg";
/// Marks a directory as written by this tool, so it may be replaced.
pub const OUTPUT_MARKER: &str = ".gscls-output";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Ply { path: PathBuf, source: PlyError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("model was trained for mode {model}, but mode {requested} was requested")]
    ModeMismatch { model: FeatureMode, requested: FeatureMode },
    #[error("dataset classes do not match the classes the model was trained on")]
    ClassMismatch,
    #[error("{0} exists and was not written by gscls; refusing to replace it")]
    OutputExists(PathBuf),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Ply { source, .. } => source.code(),
            CliError::Dataset(e) => e.code(),
            CliError::Geometry(e) => e.code(),
            CliError::Classifier(e) => e.code(),
            CliError::Checkpoint(e) => e.code(),
            CliError::Eval(e) => e.code(),
            CliError::Embedding(e) => e.code(),
            CliError::Plot(e) => e.code(),
            CliError::Io { .. } => "IoError",
            CliError::ModeMismatch { .. } => "ModeMismatch",
            CliError::ClassMismatch => "ClassMismatch",
            CliError::OutputExists(_) => "OutputExists",
            CliError::MissingInput(_) => "MissingInput",
            CliError::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

fn io_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.display().to_string())
        } else {
            io_err(path, e)
        }
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|e| io_err(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn parse_mode(s: &str) -> Result<FeatureMode, String> {
    s.parse().map_err(|e: GeometryError| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: ClassifierError| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gscls", version, about = "Classify Gaussian-splat point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summarize one splat PLY file.
    Inspect(InspectArgs),
    /// Generate the synthetic benchmark as a dataset directory.
    Synth(SynthArgs),
    /// Train a classifier on the train split of a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Tabulate several reports against the position-only baseline.
    Compare(CompareArgs),
    /// Embed global features of the test split with t-SNE.
    Embed(EmbedArgs),
    /// Draw an embedding scatter and/or a probability heatmap.
    Plot(PlotArgs),
    /// Synthesize, train every mode, evaluate, compare, embed and plot.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub objects_per_class: usize,
    #[arg(long, default_value_t = 512)]
    pub anchors: usize,
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset root. A `manifest.json` with test items fixes the split;
    /// otherwise the directory is enumerated and split here.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "posq")]
    pub mode: FeatureMode,
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    pub points: usize,
    #[arg(long, value_parser = parse_preset, default_value = "default")]
    pub preset: Preset,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feed log-scale channels instead of linear scales.
    #[arg(long)]
    pub log_scale: bool,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Must match the checkpoint's mode when given.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<FeatureMode>,
    /// Defaults to the point count the model was trained with.
    #[arg(long)]
    pub points: Option<usize>,
    /// Seeds the split when the dataset has none.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Report JSON files, one per mode; one must be mode p.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Embedding CSV to draw as a scatter plot.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Report JSON whose probability matrix is drawn as a heatmap.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "")]
    pub title: String,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub objects_per_class: usize,
    #[arg(long, default_value_t = 512)]
    pub anchors: usize,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, value_parser = parse_preset, default_value = "tiny")]
    pub preset: Preset,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, value_parser = parse_mode, value_delimiter = ',', default_value = "p,po,psq,posq")]
    pub modes: Vec<FeatureMode>,
    #[arg(long)]
    pub quiet: bool,
}

/// A directory filled under a temporary name and renamed into place.
pub struct StagedDir {
    target: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl StagedDir {
    pub fn begin(target: &Path) -> Result<Self, CliError> {
        if target.exists() {
            let ours = target.join(OUTPUT_MARKER).is_file();
            let empty = fs::read_dir(target)
                .map_err(|e| io_err(target, e))?
                .next()
                .is_none();
            if !target.is_dir() || !(ours || empty) {
                return Err(CliError::OutputExists(target.to_path_buf()));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| CliError::InvalidArgument(format!("bad output path {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| io_err(&parent, e))?;
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| io_err(&staging, e))?;
        write(&staging.join(OUTPUT_MARKER), "")?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn commit(mut self) -> Result<(), CliError> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| io_err(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| io_err(&self.target, e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn with_output<T>(out: &Path, f: impl FnOnce(&Path) -> Result<T, CliError>) -> Result<T, CliError> {
    let staged = StagedDir::begin(out)?;
    let value = f(staged.path())?;
    staged.commit()?;
    Ok(value)
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => with_output(&a.out, |dir| synth_into(a, dir)),
        Command::Train(a) => with_output(&a.out, |dir| train_into(a, dir, &a.data.data.display().to_string())),
        Command::Eval(a) => with_output(&a.out, |dir| eval_into(a, dir)).map(|r| r.to_text()),
        Command::Compare(a) => with_output(&a.out, |dir| compare_into(a, dir)),
        Command::Embed(a) => with_output(&a.out, |dir| embed_into(a, dir)),
        Command::Plot(a) => with_output(&a.out, |dir| plot_into(a, dir)),
        Command::Pipeline(a) => with_output(&a.out, |dir| pipeline_into(a, dir)),
    }
}

#[derive(Debug, Serialize)]
pub struct InspectSummary {
    pub points: usize,
    pub sh_degree: Option<u32>,
    pub color_rest_width: usize,
    pub opacity_histogram: Vec<u64>,
    pub opacity_mean: f64,
    /// Counts of log10(largest scale) in unit-wide bins from -5 to 1.
    pub max_scale_log10_histogram: Vec<u64>,
    pub median_elongation: f64,
    pub median_flatness: f64,
    pub elongation_histogram: Vec<u64>,
    pub flatness_histogram: Vec<u64>,
}

pub fn inspect_bytes(bytes: &[u8]) -> Result<InspectSummary, PlyError> {
    let raw = parse_ply(bytes)?;
    let cloud = activate(&raw)?;
    let mut opacity_histogram = vec![0u64; 10];
    for &o in cloud.opacity() {
        opacity_histogram[((o * 10.0) as usize).min(9)] += 1;
    }
    let mut max_scale_log10_histogram = vec![0u64; 6];
    for s in cloud.scale() {
        let m = s[0].max(s[1]).max(s[2]).log10();
        let bin = (m + 5.0).floor().clamp(0.0, 5.0) as usize;
        max_scale_log10_histogram[bin] += 1;
    }
    let d = anisotropy_stats(&cloud);
    debug_assert_eq!(d.elongation_histogram.len(), HISTOGRAM_BINS);
    Ok(InspectSummary {
        points: cloud.len(),
        sh_degree: raw.sh_degree(),
        color_rest_width: raw.columns().rest_width,
        opacity_histogram,
        opacity_mean: cloud.opacity().iter().sum::<f64>() / cloud.len() as f64,
        max_scale_log10_histogram,
        median_elongation: d.median_elongation(),
        median_flatness: d.median_flatness(),
        elongation_histogram: d.elongation_histogram.clone(),
        flatness_histogram: d.flatness_histogram.clone(),
    })
}

impl InspectSummary {
    pub fn to_text(&self) -> String {
        let sh = self.sh_degree.map_or("unknown".to_string(), |d| d.to_string());
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        format!(
            "points            {}\n\
             sh degree         {} (f_rest width {})\n\
             opacity mean      {:.4}\n\
             opacity hist      {}  (10 bins over [0, 1])\n\
             max scale hist    {}  (log10 bins from -5 to 1)\n\
             median elongation {:.3}\n\
             median flatness   {:.3}\n\
             elongation hist   {}\n\
             flatness hist     {}  ({} log bins over [1, 100])\n",
            self.points,
            sh,
            self.color_rest_width,
            self.opacity_mean,
            join(&self.opacity_histogram),
            join(&self.max_scale_log10_histogram),
            self.median_elongation,
            self.median_flatness,
            join(&self.elongation_histogram),
            join(&self.flatness_histogram),
            HISTOGRAM_BINS
        )
    }
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String, CliError> {
    let bytes = read(&args.path)?;
    let summary = inspect_bytes(&bytes).map_err(|source| CliError::Ply {
        path: args.path.clone(),
        source,
    })?;
    Ok(if args.json {
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
    } else {
        summary.to_text()
    })
}

fn synth_into(args: &SynthArgs, dir: &Path) -> Result<String, CliError> {
    let spec = SynthSpec {
        anchors_per_object: args.anchors,
        jitter_sigma: args.jitter,
        objects_per_class: args.objects_per_class,
        seed: args.seed,
    };
    let data = synth_generate(&spec)?;
    let manifest = split(&data.manifest(), args.test_fraction, args.seed)?;
    write_synth(dir, &data, &manifest)?;
    Ok(format!(
        "wrote {} objects in {} classes ({} test)\n",
        data.objects.len(),
        data.classes.len(),
        manifest.items_in(Split::Test).count()
    ))
}

/// The dataset's manifest with a train/test split.
pub fn resolve_manifest(data: &DataArgs, seed: u64) -> Result<DatasetManifest, CliError> {
    if data.data.join(MANIFEST_FILE).is_file() {
        let m = read_manifest(&data.data)?;
        if m.items_in(Split::Test).next().is_some() {
            return Ok(m);
        }
        return Ok(split(&m, data.test_fraction, seed)?);
    }
    let m = load_dataset(&data.data)?;
    Ok(split(&m, data.test_fraction, seed)?)
}

/// Loads and activates every item of `split`, in manifest order, as
/// (sampling key, label, cloud).
pub fn load_split(
    root: &Path,
    manifest: &DatasetManifest,
    which: Split,
) -> Result<Vec<(String, usize, gscls_core::gs_ply::GaussianCloud)>, CliError> {
    let items: Vec<_> = manifest.items_in(which).collect();
    items
        .par_iter()
        .map(|item| Ok((item.group_key().to_string(), item.class, load_cloud(root, item)?)))
        .collect()
}

#[derive(Debug, Serialize)]
struct RunConfig<'a> {
    command: &'a str,
    data: String,
    mode: FeatureMode,
    points: usize,
    preset: Preset,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
    test_fraction: f64,
    log_scale: bool,
}

/// `data_label` is how the dataset is named in `run_config.json`.
fn train_into(args: &TrainArgs, dir: &Path, data_label: &str) -> Result<String, CliError> {
    let manifest = resolve_manifest(&args.data, args.seed)?;
    let objects = load_split(&args.data.data, &manifest, Split::Train)?;
    let (model, log) = train_model(args, &manifest.classes, objects)?;
    write(&dir.join(MODEL_FILE), model.to_checkpoint()?.encode()?)?;
    write(&dir.join(TRAINING_LOG_FILE), log.to_jsonl())?;
    let run = RunConfig {
        command: "train",
        data: data_label.to_string(),
        mode: args.mode,
        points: args.points,
        preset: args.preset,
        epochs: args.epochs,
        batch: args.batch,
        lr: args.lr,
        seed: args.seed,
        test_fraction: args.data.test_fraction,
        log_scale: args.log_scale,
    };
    write(
        &dir.join(RUN_CONFIG_FILE),
        serde_json::to_string_pretty(&run).expect("config serializes") + "\n",
    )?;
    let last = log.epochs.last().expect("log has epoch 0");
    Ok(format!(
        "mode {} epoch {} loss {:.4} train accuracy {:.2}%\n",
        args.mode,
        last.epoch,
        last.loss,
        100.0 * last.train_acc
    ))
}

/// Builds and trains a model; everything random derives from `args.seed`.
pub fn train_model(
    args: &TrainArgs,
    classes: &[String],
    objects: Vec<(String, usize, gscls_core::gs_ply::GaussianCloud)>,
) -> Result<(ClassifierModel, gscls_core::classifier::TrainingLog), CliError> {
    if args.points == 0 {
        return Err(CliError::InvalidArgument("--points must be positive".into()));
    }
    let config = ClassifierConfig::preset(args.preset, args.mode, classes.len());
    config.validate()?;
    let options = FeatureOptions {
        log_scale: args.log_scale,
    };
    let set = CloudSet::new(objects, args.mode, args.points, options, SamplingPolicy::PerEpoch { seed: args.seed })?;
    let mut model = build_model(config, args.seed)?;
    model.info.class_names = classes.to_vec();
    model.info.points = Some(args.points);
    model.info.log_scale = args.log_scale;
    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        seed: args.seed,
    };
    let mode = args.mode;
    let quiet = args.quiet;
    let log = train_with_progress(&mut model, &set, &train_config, |e| {
        if !quiet {
            eprintln!(
                "[{mode}] epoch {:>3}  loss {:.4}  train acc {:.2}%",
                e.epoch,
                e.loss,
                100.0 * e.train_acc
            );
        }
    })?;
    Ok((model, log))
}

pub fn load_model(path: &Path) -> Result<ClassifierModel, CliError> {
    let ckpt = Checkpoint::decode(&read(path)?)?;
    Ok(ClassifierModel::from_checkpoint(&ckpt)?)
}

fn model_mode(model: &ClassifierModel) -> FeatureMode {
    model.config().feature_mode().expect("validated config")
}

/// Test-split features for `model`, sampled with per-object keys.
fn test_set(
    model: &ClassifierModel,
    data: &DataArgs,
    seed: u64,
    points: Option<usize>,
) -> Result<(DatasetManifest, CloudSet), CliError> {
    let manifest = resolve_manifest(data, seed)?;
    if !model.info.class_names.is_empty() && model.info.class_names != manifest.classes {
        return Err(CliError::ClassMismatch);
    }
    if model.config().num_classes != manifest.classes.len() {
        return Err(CliError::ClassMismatch);
    }
    let points = points.or(model.info.points).unwrap_or(DEFAULT_POINTS);
    let objects = load_split(&data.data, &manifest, Split::Test)?;
    let options = FeatureOptions {
        log_scale: model.info.log_scale,
    };
    let set = CloudSet::new(objects, model_mode(model), points, options, SamplingPolicy::ObjectId)?;
    Ok((manifest, set))
}

fn write_report(report: &EvalReport, dir: &Path) -> Result<(), CliError> {
    write(&dir.join(REPORT_FILE), report.to_json())?;
    write(&dir.join(REPORT_TEXT_FILE), report.to_text())?;
    write(&dir.join(PROB_CSV_FILE), report.prob_matrix_csv())
}

fn eval_into(args: &EvalArgs, dir: &Path) -> Result<EvalReport, CliError> {
    let model = load_model(&args.model)?;
    let mode = model_mode(&model);
    if let Some(requested) = args.mode {
        if requested != mode {
            return Err(CliError::ModeMismatch { model: mode, requested });
        }
    }
    let (manifest, set) = test_set(&model, &args.data, args.seed, args.points)?;
    let report = evaluate(&model, &set, &manifest.classes, mode)?;
    write_report(&report, dir)?;
    Ok(report)
}

fn compare_into(args: &CompareArgs, dir: &Path) -> Result<String, CliError> {
    let reports = args
        .reports
        .iter()
        .map(|p| EvalReport::from_json(&read_text(p)?).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = compare_modes(&reports)?;
    write(&dir.join(COMPARISON_FILE), cmp.to_json())?;
    let text = cmp.to_text();
    write(&dir.join(COMPARISON_TEXT_FILE), &text)?;
    Ok(text)
}

#[derive(Debug, Serialize)]
struct TsneSummary {
    config: TsneConfig,
    points: usize,
    min_row_perplexity: f64,
    max_row_perplexity: f64,
    kl_initial: f64,
    kl_after_exaggeration: f64,
    kl_final: f64,
    silhouette: f64,
    kl_trace: Vec<f64>,
}

/// Global features of the test split, embedded in 2-D. Returns the CSV
/// rows and the silhouette of the embedding under the true labels.
pub fn embed_model(
    model: &ClassifierModel,
    classes: &[String],
    set: &CloudSet,
    config: &TsneConfig,
) -> Result<(Vec<EmbeddingRow>, f64, Vec<f64>, Vec<f64>), CliError> {
    let features: Vec<Vec<f64>> = (0..set.len())
        .into_par_iter()
        .map(|i| Ok(model.global_feature(&set.features(i, 0)?)?))
        .collect::<Result<_, CliError>>()?;
    let result = tsne(&features, config)?;
    let labels = set.labels();
    let points: Vec<Vec<f64>> = result.embedding.iter().map(|p| p.to_vec()).collect();
    let silhouette = silhouette_score(&points, &labels)?;
    let rows = result
        .embedding
        .iter()
        .zip(&labels)
        .map(|(p, &l)| EmbeddingRow {
            x: p[0],
            y: p[1],
            label: l,
            class: classes[l].clone(),
        })
        .collect();
    Ok((rows, silhouette, result.kl_trace, result.row_perplexity))
}

fn write_embedding(
    dir: &Path,
    config: &TsneConfig,
    rows: &[EmbeddingRow],
    silhouette: f64,
    kl_trace: Vec<f64>,
    perplexity: &[f64],
) -> Result<(), CliError> {
    write(&dir.join(EMBEDDING_FILE), write_embedding_csv(rows)?)?;
    let summary = TsneSummary {
        config: *config,
        points: rows.len(),
        min_row_perplexity: perplexity.iter().copied().fold(f64::INFINITY, f64::min),
        max_row_perplexity: perplexity.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        kl_initial: kl_trace[0],
        kl_after_exaggeration: kl_trace[config.exaggeration_iterations],
        kl_final: *kl_trace.last().expect("non-empty trace"),
        silhouette,
        kl_trace,
    };
    write(
        &dir.join(TSNE_FILE),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )
}

fn tsne_config(perplexity: f64, iterations: usize, seed: u64) -> TsneConfig {
    TsneConfig {
        perplexity,
        iterations,
        seed,
        ..TsneConfig::default()
    }
}

fn embed_into(args: &EmbedArgs, dir: &Path) -> Result<String, CliError> {
    let model = load_model(&args.model)?;
    let (manifest, set) = test_set(&model, &args.data, args.seed, args.points)?;
    let config = tsne_config(args.perplexity, args.iterations, args.seed);
    let (rows, silhouette, kl, perp) = embed_model(&model, &manifest.classes, &set, &config)?;
    let summary = format!(
        "embedded {} objects; KL {:.4} -> {:.4}; silhouette {:.4}\n",
        rows.len(),
        kl[0],
        kl.last().expect("non-empty"),
        silhouette
    );
    write_embedding(dir, &config, &rows, silhouette, kl, &perp)?;
    Ok(summary)
}

pub fn scatter_from_rows(rows: &[EmbeddingRow], title: &str) -> Result<String, CliError> {
    let k = rows.iter().map(|r| r.label + 1).max().unwrap_or(0);
    let mut names = vec![String::new(); k];
    for r in rows {
        names[r.label] = r.class.clone();
    }
    let points: Vec<[f64; 2]> = rows.iter().map(|r| [r.x, r.y]).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    Ok(scatter_svg(&points, &labels, &names, title)?)
}

pub fn heatmap_from_report(report: &EvalReport, title: &str) -> Result<String, CliError> {
    Ok(heatmap_svg(&report.prob_matrix, &report.classes, &report.classes, title)?)
}

fn plot_into(args: &PlotArgs, dir: &Path) -> Result<String, CliError> {
    if args.embedding.is_none() && args.report.is_none() {
        return Err(CliError::MissingInput("--embedding and/or --report".into()));
    }
    let mut written = Vec::new();
    if let Some(path) = &args.embedding {
        let rows = read_embedding_csv(&read_text(path)?)?;
        write(&dir.join(SCATTER_FILE), scatter_from_rows(&rows, &args.title)?)?;
        written.push(SCATTER_FILE);
    }
    if let Some(path) = &args.report {
        let report = EvalReport::from_json(&read_text(path)?)?;
        write(&dir.join(HEATMAP_FILE), heatmap_from_report(&report, &args.title)?)?;
        written.push(HEATMAP_FILE);
    }
    Ok(format!("wrote {}\n", written.join(", ")))
}

fn subdir(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    Ok(p)
}

/// End-to-end synthetic run:
///
/// ```text
/// out/data/                       synthetic dataset and manifest
/// out/<mode>/model.ckpt           plus training_log.jsonl, run_config.json
/// out/<mode>/report.json          plus report.txt, prob_matrix.csv
/// out/<mode>/embedding.csv        plus tsne.json
/// out/<mode>/scatter.svg          plus heatmap.svg
/// out/comparison.json             plus comparison.txt
/// ```
fn pipeline_into(args: &PipelineArgs, dir: &Path) -> Result<String, CliError> {
    if args.modes.is_empty() {
        return Err(CliError::InvalidArgument("--modes is empty".into()));
    }
    let data_dir = subdir(dir, "data")?;
    synth_into(
        &SynthArgs {
            out: data_dir.clone(),
            objects_per_class: args.objects_per_class,
            anchors: args.anchors,
            jitter: 0.01,
            seed: args.seed,
            test_fraction: args.test_fraction,
        },
        &data_dir,
    )?;
    let data = DataArgs {
        data: data_dir,
        test_fraction: args.test_fraction,
    };
    let mut reports = Vec::new();
    for &mode in &args.modes {
        let mode_dir = subdir(dir, mode.as_str())?;
        let train = TrainArgs {
            data: data.clone(),
            out: mode_dir.clone(),
            mode,
            points: args.points,
            preset: args.preset,
            epochs: args.epochs,
            batch: args.batch,
            lr: args.lr,
            seed: args.seed,
            log_scale: false,
            quiet: args.quiet,
        };
        // Relative, so reruns into different directories match byte for byte.
        train_into(&train, &mode_dir, "../data")?;
        let model_path = mode_dir.join(MODEL_FILE);
        let report = eval_into(
            &EvalArgs {
                data: data.clone(),
                model: model_path.clone(),
                out: mode_dir.clone(),
                mode: Some(mode),
                points: None,
                seed: args.seed,
            },
            &mode_dir,
        )?;
        embed_into(
            &EmbedArgs {
                data: data.clone(),
                model: model_path,
                out: mode_dir.clone(),
                points: None,
                perplexity: args.perplexity,
                iterations: args.iterations,
                seed: args.seed,
            },
            &mode_dir,
        )?;
        let title = format!("mode {mode}");
        plot_into(
            &PlotArgs {
                embedding: Some(mode_dir.join(EMBEDDING_FILE)),
                report: Some(mode_dir.join(REPORT_FILE)),
                out: mode_dir.clone(),
                title,
            },
            &mode_dir,
        )?;
        reports.push(report);
    }
    let mut out = String::new();
    for r in &reports {
        out.push_str(&format!(
            "mode {:<4}  OA {:6.2}%  mAcc {:6.2}%\n",
            r.mode.as_str(),
            100.0 * r.overall_accuracy,
            100.0 * r.mean_class_accuracy
        ));
    }
    if reports.iter().any(|r| r.mode == FeatureMode::P) {
        let cmp = compare_modes(&reports)?;
        write(&dir.join(COMPARISON_FILE), cmp.to_json())?;
        let text = cmp.to_text();
        write(&dir.join(COMPARISON_TEXT_FILE), &text)?;
        out.push('\n');
        out.push_str(&text);
    }
    Ok(out)
}

/// Sizes the global thread pool from `GSCLS_THREADS` when it is set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("GSCLS_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::InvalidArgument(format!("GSCLS_THREADS={value} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::InvalidArgument(e.to_string()))
}

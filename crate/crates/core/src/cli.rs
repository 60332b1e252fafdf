//! Command-line surface: `extract`, `train`, `evaluate`, `predict`.
//!
//! Exit codes: 0 success, 2 malformed input, 3 I/O failure, 4 not enough
//! usable data, 5 model schema version mismatch.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::audio::MAX_SECONDS;
use crate::dataset::{self, DatasetError, SplitConfig};
use crate::metrics::{self, EvaluationReport, MetricsError};
use crate::net::{self, MlpModel, NetError, TrainConfig};
use crate::pipeline::{self, ClipError};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_VERSION: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "mimic-audit", version, about = "Blind detection of human-mimicked speech")]
pub struct Cli {
    /// More progress output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only print results and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the 26 features of every convention-named WAV in a directory.
    Extract(ExtractArgs),
    /// Split a feature CSV, train the classifier and write the model.
    Train(TrainArgs),
    /// Score a feature CSV with a model and write the metrics report.
    Evaluate(EvaluateArgs),
    /// Classify one WAV file.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    /// Feature CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = MAX_SECONDS)]
    pub max_seconds: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    pub model: PathBuf,
    /// Per-epoch history CSV [default: <model>.history.csv].
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Held-out test rows as a feature CSV [default: <model>.test.csv].
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// TOML file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub val_split: Option<f64>,
    #[arg(long)]
    pub test_split: Option<f64>,
    #[arg(long, env = "MIMIC_AUDIT_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub report: PathBuf,
    /// ROC CSV to write [default: <report>.roc.csv].
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = MAX_SECONDS)]
    pub max_seconds: f64,
    pub wav: PathBuf,
}

/// Training settings accepted from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub val_split: Option<f64>,
    pub test_split: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Io { .. } => EXIT_IO,
            DatasetError::Stratification(_) | DatasetError::InsufficientData { .. } => EXIT_DATA,
            _ => EXIT_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        let code = match e {
            NetError::SingleClass { .. } => EXIT_DATA,
            NetError::SchemaVersion { .. } => EXIT_VERSION,
            _ => EXIT_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::LengthMismatch { .. } | MetricsError::NonFiniteScore(_) => EXIT_INPUT,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ClipError> for CliError {
    fn from(e: ClipError) -> Self {
        let code = match e {
            ClipError::Io { .. } => EXIT_IO,
            _ => EXIT_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

/// Routes progress and warnings to standard error by verbosity.
pub struct Reporter {
    pub level: i8,
}

impl Reporter {
    pub fn progress(&self, msg: impl AsRef<str>) {
        if self.level >= 1 {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn warn(&self, msg: impl AsRef<str>) {
        if self.level >= 0 {
            eprintln!("warning: {}", msg.as_ref());
        }
    }
}

/// Writes through a temporary file in the target directory, renamed into
/// place only once complete.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| {
        CliError::new(EXIT_IO, format!("cannot write {}: {e}", path.display()))
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Fails early when an output's directory is missing, before any work.
fn check_output_dir(path: &Path) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if dir.is_dir() && !path.is_dir() {
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_IO,
            format!("cannot write {}: no such directory or path is a directory", path.display()),
        ))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path)
        .map_err(|e| CliError::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}

fn read_manifest_csv(path: &Path) -> Result<dataset::DatasetManifest, CliError> {
    let bytes = read_file(path)?;
    dataset::read_feature_csv(bytes.as_slice()).map_err(|e| {
        CliError::new(EXIT_INPUT, format!("{}: {e}", path.display()))
    })
}

fn load_model(path: &Path) -> Result<MlpModel, CliError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::new(EXIT_INPUT, format!("{} is not UTF-8", path.display())))?;
    MlpModel::from_json(&text).map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn derived_path(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base
        .file_stem()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    base.with_file_name(name)
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::new(EXIT_INPUT, format!("--{name} must be positive, got {v}")))
    }
}

pub fn cmd_extract(args: &ExtractArgs, out: &Reporter) -> Result<String, CliError> {
    check_positive("max-seconds", args.max_seconds)?;
    check_output_dir(&args.output)?;
    if !args.input_dir.is_dir() {
        return Err(CliError::new(
            EXIT_IO,
            format!("{} is not a readable directory", args.input_dir.display()),
        ));
    }
    let manifest = dataset::build_manifest(&args.input_dir)?;
    out.progress(format!("found {} WAV files", manifest.len()));

    let (extracted, skipped) = pipeline::extract_manifest(&manifest, args.max_seconds);
    for s in extracted.samples() {
        out.progress(format!("  {} ({})", s.file_name(), s.label));
    }
    for s in &skipped {
        out.warn(format!("skipping {}: {}", s.sample.file_name(), s.error));
    }

    let mut buf = Vec::new();
    dataset::write_feature_csv(&extracted, &mut buf)?;
    write_atomic(&args.output, &buf)?;
    Ok(format!(
        "extracted {} of {} files ({} real, {} faked) to {}",
        extracted.len(),
        manifest.len(),
        extracted.count(dataset::Label::Real),
        extracted.count(dataset::Label::Faked),
        args.output.display()
    ))
}

/// Resolves flags, then the config file, then built-in defaults.
pub fn resolve_train_settings(args: &TrainArgs) -> Result<(TrainConfig, SplitConfig), CliError> {
    let file: FileConfig = match &args.config {
        None => FileConfig::default(),
        Some(path) => {
            let text = String::from_utf8(read_file(path)?).map_err(|_| {
                CliError::new(EXIT_INPUT, format!("{} is not UTF-8", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| CliError::new(EXIT_INPUT, format!("{}: {e}", path.display())))?
        }
    };
    let defaults = TrainConfig::default();
    let split_defaults = SplitConfig::default();
    let seed = args.seed.or(file.seed).unwrap_or(defaults.seed);
    let train = TrainConfig {
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        validation_fraction: args
            .val_split
            .or(file.val_split)
            .unwrap_or(defaults.validation_fraction),
        seed,
        ..defaults
    };
    let split = SplitConfig {
        test_fraction: args
            .test_split
            .or(file.test_split)
            .unwrap_or(split_defaults.test_fraction),
        validation_fraction: train.validation_fraction,
        seed,
    };
    train.validate()?;
    split.validate()?;
    Ok((train, split))
}

pub fn cmd_train(args: &TrainArgs, out: &Reporter) -> Result<String, CliError> {
    let (cfg, split_cfg) = resolve_train_settings(args)?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| derived_path(&args.model, ".history.csv"));
    let test_path = args
        .test_out
        .clone()
        .unwrap_or_else(|| derived_path(&args.model, ".test.csv"));
    for p in [&args.model, &history_path, &test_path] {
        check_output_dir(p)?;
    }
    let manifest = read_manifest_csv(&args.features)?;
    let (train_set, test_set) = dataset::split(&manifest, &split_cfg)?;
    out.progress(format!(
        "training on {} rows, holding out {} for testing",
        train_set.len(),
        test_set.len()
    ));

    let features: Vec<Vec<f64>> = train_set
        .feature_vectors()?
        .iter()
        .map(|f| f.values.to_vec())
        .collect();
    let (model, history) = net::train(&features, &train_set.labels(), &cfg)?;
    if let (Some(l), Some(v)) = (history.train_loss.last(), history.val_accuracy.last()) {
        out.progress(format!("final training loss {l:.4}, validation accuracy {v:.3}"));
    }

    let mut test_csv = Vec::new();
    dataset::write_feature_csv(&test_set, &mut test_csv)?;

    write_atomic(&args.model, model.to_json().as_bytes())?;
    write_atomic(&history_path, history.to_csv().as_bytes())?;
    write_atomic(&test_path, &test_csv)?;
    Ok(format!(
        "trained {} epochs; model written to {}, history to {}, test rows to {}",
        history.len(),
        args.model.display(),
        history_path.display(),
        test_path.display()
    ))
}

pub fn cmd_evaluate(args: &EvaluateArgs, _out: &Reporter) -> Result<String, CliError> {
    let roc_path = args
        .roc_out
        .clone()
        .unwrap_or_else(|| derived_path(&args.report, ".roc.csv"));
    check_output_dir(&args.report)?;
    check_output_dir(&roc_path)?;
    let model = load_model(&args.model)?;
    let manifest = read_manifest_csv(&args.features)?;
    let features = manifest.feature_vectors()?;
    let labels = manifest.labels();

    let mut predictions = Vec::with_capacity(features.len());
    let mut scores = Vec::with_capacity(features.len());
    for fv in &features {
        let p = model.predict(fv.as_slice())?;
        predictions.push(p.label);
        scores.push(p.faked_probability);
    }
    let cm = metrics::confusion(&labels, &predictions)?;
    let report_metrics = metrics::compute_metrics(&cm)?;
    let roc = metrics::roc_curve(&scores, &labels)?;
    let report = EvaluationReport::new(report_metrics, &roc);
    write_atomic(&args.report, report.to_json().as_bytes())?;
    write_atomic(&roc_path, roc.to_csv().as_bytes())?;
    Ok(report.summary().trim_end().to_string())
}

pub fn cmd_predict(args: &PredictArgs, _out: &Reporter) -> Result<String, CliError> {
    check_positive("max-seconds", args.max_seconds)?;
    let model = load_model(&args.model)?;
    let fv = pipeline::features_from_file(
        &args.wav,
        args.max_seconds,
        &pipeline::analysis_extractor(),
    )?;
    let p = model.predict(fv.as_slice())?;
    Ok(serde_json::json!({
        "label": p.label.as_str(),
        "confidence": p.confidence,
    })
    .to_string())
}

/// Runs a parsed command; the `Ok` text goes to standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let reporter = Reporter {
        level: if cli.quiet { -1 } else { cli.verbose.min(2) as i8 },
    };
    match &cli.command {
        Command::Extract(a) => cmd_extract(a, &reporter),
        Command::Train(a) => cmd_train(a, &reporter),
        Command::Evaluate(a) => cmd_evaluate(a, &reporter),
        Command::Predict(a) => cmd_predict(a, &reporter),
    }
}

//! Command-line front end: `synth`, `train`, `calibrate`, `detect`, `eval`.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::attackgen::Scenario;
use crate::eval::DEFAULT_BUDGETS;
use crate::ingest::{LogFormat, LogReader};
use crate::pipeline::{self, Artifacts, PipelineError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "canids", version, about = "Signal-level CAN intrusion detection with an autoencoder ensemble")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset from a scenario file.
    Synth(SynthArgs),
    /// Fit signal order and scaler, then train one autoencoder per period.
    Train(TrainArgs),
    /// Compute the three threshold tiers on attack-free traffic.
    Calibrate(CalibrateArgs),
    /// Stream a log through the detector and write per-window verdicts.
    Detect(DetectArgs),
    /// ROC/AUC and detection latency for verdicts against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub format: Option<LogFormat>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario JSON; the built-in desk-scale suite when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training log, or a synthetic dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    /// Overrides the configured epoch count; 0 keeps the initial weights.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Attack-free log, or a synthetic dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    /// Output path of the threshold file.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Log to scan, or a synthetic dataset directory (every test file and the hold-out).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Verdict CSV, or a directory when `--data` is a dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Records between scored windows.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Synthetic dataset directory holding the labelled logs and event lists.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of `<name>.csv` verdict files.
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// False-positive budgets for the latency table.
    #[arg(long, value_delimiter = ',')]
    pub fpr_budget: Vec<f64>,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(format) = common.format {
        cfg.format = format;
    }
    Ok(cfg)
}

fn required(value: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| PipelineError::Config(format!("{flag} is required (flag or config paths)")).into())
}

/// Picks a file out of a dataset directory, or returns `path` itself.
fn dataset_file(path: &Path, pick: impl Fn(&pipeline::DatasetManifest) -> String) -> Result<PathBuf> {
    if path.is_dir() {
        let dataset = pipeline::load_dataset(path)?;
        Ok(path.join(pick(&dataset)))
    } else {
        Ok(path.to_path_buf())
    }
}

fn load_artifacts(dir: &Path, cfg: &RunConfig, explicit_config: bool) -> Result<Artifacts> {
    let artifacts = Artifacts::load(dir)?;
    if explicit_config {
        artifacts.check_config(cfg)?;
    }
    Ok(artifacts)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut scenario = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|_| PipelineError::Config(format!("cannot read {}", path.display())))?;
            serde_json::from_str::<Scenario>(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        }
        None => Scenario::desk(280_000, 140_000, 140_000, 4, 0),
    };
    if let Some(seed) = args.seed {
        scenario.traffic.seed = seed;
    }
    let manifest = pipeline::synthesize(&scenario, &args.out)?;
    println!("wrote {} test files and {} to {}", manifest.tests.len(), manifest.train, args.out.display());
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(epochs) = args.epochs {
        cfg.ae.epochs = epochs;
    }
    let data = dataset_file(&required(args.data, &cfg.paths.data, "--data")?, |d| d.train.clone())?;
    let models_dir = required(args.models_dir, &cfg.paths.models, "--models-dir")?;
    if models_dir.join("manifest.json").exists() {
        let existing = Artifacts::load(&models_dir)?;
        if cfg.m.is_some_and(|m| m != existing.m()) {
            return Err(PipelineError::ArtifactMismatch(format!(
                "{} holds models for m={}, config asks for m={}",
                models_dir.display(),
                existing.m(),
                cfg.m.unwrap()
            ))
            .into());
        }
    }
    let log = pipeline::load_records(&data, cfg.format)?;
    if !log.malformed.is_empty() {
        eprintln!("skipped {} malformed rows", log.malformed.len());
    }
    let artifacts = pipeline::train(&cfg, &log.records, &log.signal_names)?;
    artifacts.save(&models_dir)?;
    for model in &artifacts.models {
        println!(
            "period {}: {} epochs, final training loss {}",
            model.period,
            model.history.len(),
            model.history.last().map_or("n/a".to_string(), |l| format!("{l:.6}"))
        );
    }
    println!("saved {} models to {}", artifacts.models.len(), models_dir.display());
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let data = dataset_file(&required(args.data, &cfg.paths.data, "--data")?, |d| {
        d.calibration.clone().unwrap_or_else(|| d.train.clone())
    })?;
    let models_dir = required(args.models_dir, &cfg.paths.models, "--models-dir")?;
    let out = required(args.thresholds, &cfg.paths.thresholds, "--thresholds")?;
    let artifacts = load_artifacts(&models_dir, &cfg, args.common.config.is_some())?;
    let log = pipeline::load_records(&data, cfg.format)?;
    let calibration = pipeline::calibrate(&cfg, &artifacts, &log.records)?;
    pipeline::save_thresholds(&out, &calibration.thresholds)?;
    println!(
        "calibrated on {} windows (p={}, q={}, r={}): ensemble threshold {}",
        calibration.thresholds.windows,
        cfg.percentiles.p,
        cfg.percentiles.q_pct,
        cfg.percentiles.r,
        calibration.thresholds.r_signal
    );
    Ok(())
}

fn detect_file(cfg: &RunConfig, artifacts: &Artifacts, thresholds: &crate::detect::ThresholdSet, data: &Path, out: &Path, stride: usize) -> Result<usize> {
    if !data.exists() {
        return Err(PipelineError::MissingArtifact(data.to_path_buf()).into());
    }
    let reader = LogReader::open(data, cfg.format).map_err(PipelineError::from)?;
    let rows = pipeline::detect_to_csv(artifacts, thresholds, reader, stride, cfg.sampling.batch, out)?;
    Ok(rows)
}

pub fn detect(args: DetectArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let data = required(args.data, &cfg.paths.data, "--data")?;
    let models_dir = required(args.models_dir, &cfg.paths.models, "--models-dir")?;
    let thresholds_path = required(args.thresholds, &cfg.paths.thresholds, "--thresholds")?;
    let artifacts = load_artifacts(&models_dir, &cfg, args.common.config.is_some())?;
    let thresholds = pipeline::load_thresholds(&thresholds_path)?;
    artifacts.check_thresholds(&thresholds)?;
    let stride = args.stride.unwrap_or(cfg.sampling.detect_stride);
    if data.is_dir() {
        let dataset = pipeline::load_dataset(&data)?;
        let mut files: Vec<String> = dataset.tests.iter().map(|t| format!("{t}.csv")).collect();
        files.extend(dataset.holdout.clone());
        for file in files {
            let rows = detect_file(&cfg, &artifacts, &thresholds, &data.join(&file), &args.out.join(&file), stride)?;
            println!("{file}: {rows} verdicts");
        }
    } else {
        let rows = detect_file(&cfg, &artifacts, &thresholds, &data, &args.out, stride)?;
        println!("{rows} verdicts written to {}", args.out.display());
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let data = required(args.data, &cfg.paths.data, "--data")?;
    let thresholds_path = required(args.thresholds, &cfg.paths.thresholds, "--thresholds")?;
    let out = required(args.out, &cfg.paths.reports, "--out")?;
    let thresholds = pipeline::load_thresholds(&thresholds_path)?;
    let budgets = if args.fpr_budget.is_empty() { DEFAULT_BUDGETS.to_vec() } else { args.fpr_budget };
    let report = pipeline::evaluate_dataset(&data, &args.verdicts, &thresholds, &budgets, cfg.format, &out)?;
    for row in &report.auc {
        println!("{:<12} ensemble AUC {:.4}", row.attack, row.ensemble);
    }
    for row in &report.benign {
        println!("{:<12} positive rate {:.4} over {} windows", row.name, row.positive_rate, row.windows);
    }
    println!("report written to {}", out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
    }
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<PipelineError>())
        .map_or(3, PipelineError::exit_code)
}

//! End-to-end workflows over persisted artifacts: training, calibration,
//! streaming detection and evaluation. The command-line front end and the
//! integration tests both drive the detector through this module.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::attackgen::{AttackEvent, AttackGenError, Scenario};
use crate::detect::{self, Calibration, DetectError, Percentiles, ThresholdSet, Verdict};
use crate::eval::{self, AttackRun, EvalError, Report, ScoredWindow};
use crate::ingest::{self, IngestError, LogFormat, SignalRecord};
use crate::model::{self, AeConfig, AeModel, LossMatrix, ModelError};
use crate::preprocess::{self, queue_depth, DataQueue, PreprocessError, Scaler, SignalOrder, View};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Scenario(#[from] AttackGenError),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit status for this failure: 2 configuration, 3 data,
    /// 4 artifact mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Scenario(_) => 2,
            PipelineError::Model(ModelError::InvalidConfig(_)) => 2,
            PipelineError::Detect(DetectError::BadPercentile(_)) | PipelineError::Eval(EvalError::BadBudget(_)) => 2,
            PipelineError::ArtifactMismatch(_) | PipelineError::MissingArtifact(_) => 4,
            PipelineError::Model(ModelError::Format(_))
            | PipelineError::Model(ModelError::ShapeMismatch { .. })
            | PipelineError::Model(ModelError::PeriodMismatch { .. }) => 4,
            PipelineError::Detect(DetectError::ShapeMismatch { .. } | DetectError::ModelCountMismatch { .. }) => 4,
            PipelineError::Eval(EvalError::MissingArtifacts(_)) => 4,
            _ => 3,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Window sampling used when building training, calibration and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    /// Records between consecutive training windows (raised to respect the cap).
    pub train_stride: usize,
    pub max_train_windows: usize,
    /// Trailing share of the training windows held out for early stopping.
    pub validation_fraction: f64,
    pub calibration_stride: usize,
    pub max_calibration_windows: usize,
    /// Records between scored windows at deployment; 1 scores every message.
    pub detect_stride: usize,
    /// Windows scored per forward pass.
    pub batch: usize,
    /// Columns of the forward-filled series used to fit the signal order.
    pub max_order_columns: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            train_stride: 1,
            max_train_windows: 4000,
            validation_fraction: 0.1,
            calibration_stride: 1,
            max_calibration_windows: 50_000,
            detect_stride: 1,
            batch: 64,
            max_order_columns: 50_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

/// Everything a run needs, loadable from JSON with every field optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Number of signals; inferred from the training data when absent.
    pub m: Option<usize>,
    pub w: usize,
    pub periods: Vec<usize>,
    pub percentiles: Percentiles,
    /// Autoencoder hyper-parameters; `m`, `w` and `seed` are filled in per model.
    pub ae: AeConfig,
    pub sampling: Sampling,
    pub paths: Paths,
    pub format: LogFormat,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: None,
            w: 50,
            periods: vec![1, 5, 10],
            percentiles: Percentiles::default(),
            ae: AeConfig::default(),
            sampling: Sampling::default(),
            paths: Paths::default(),
            format: LogFormat::CanonicalCsv,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| PipelineError::Config(format!("cannot read {}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(PipelineError::Config(s.into()));
        if self.w == 0 {
            return bad("w must be positive");
        }
        if self.periods.is_empty() || self.periods.contains(&0) {
            return bad("periods must be non-empty and positive");
        }
        let s = &self.sampling;
        if s.train_stride == 0 || s.calibration_stride == 0 || s.detect_stride == 0 || s.batch == 0 {
            return bad("strides and batch size must be positive");
        }
        if !(0.0..1.0).contains(&s.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        for p in [self.percentiles.p, self.percentiles.q_pct, self.percentiles.r] {
            if !(p > 0.0 && p < 100.0) {
                return bad("percentiles must lie in (0, 100)");
            }
        }
        Ok(())
    }

    /// Queue depth `w · max(T)`.
    pub fn depth(&self) -> usize {
        queue_depth(self.w, &self.periods)
    }

    fn ae_config(&self, m: usize, index: usize) -> AeConfig {
        AeConfig { m, w: self.w, seed: self.seed.wrapping_mul(1000).wrapping_add(index as u64), ..self.ae.clone() }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|_| PipelineError::MissingArtifact(path.to_path_buf()))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Header persisted next to the models, checked by every later command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub m: usize,
    pub w: usize,
    pub periods: Vec<usize>,
    pub signal_names: Vec<String>,
    pub models: Vec<String>,
    pub ae: AeConfig,
    pub train_records: usize,
    pub train_windows: usize,
    pub validation_windows: usize,
}

/// Trained detector state: signal order, scaler and one model per period.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub manifest: Manifest,
    pub order: SignalOrder,
    pub scaler: Scaler,
    pub models: Vec<AeModel>,
}

impl Artifacts {
    pub fn m(&self) -> usize {
        self.manifest.m
    }

    pub fn depth(&self) -> usize {
        queue_depth(self.manifest.w, &self.manifest.periods)
    }

    /// Fails when `cfg` names a different geometry than the one trained.
    pub fn check_config(&self, cfg: &RunConfig) -> Result<()> {
        let man = &self.manifest;
        if cfg.m.is_some_and(|m| m != man.m) || cfg.w != man.w || cfg.periods != man.periods {
            return Err(PipelineError::ArtifactMismatch(format!(
                "config expects m={:?} w={} periods={:?}, models have m={} w={} periods={:?}",
                cfg.m, cfg.w, cfg.periods, man.m, man.w, man.periods
            )));
        }
        Ok(())
    }

    /// Fails when the thresholds were calibrated for other models.
    pub fn check_thresholds(&self, th: &ThresholdSet) -> Result<()> {
        let man = &self.manifest;
        if th.m != man.m || th.w != man.w || th.periods != man.periods {
            return Err(PipelineError::ArtifactMismatch(format!(
                "thresholds are for m={} w={} periods={:?}, models have m={} w={} periods={:?}",
                th.m, th.w, th.periods, man.m, man.w, man.periods
            )));
        }
        th.validate().map_err(PipelineError::ArtifactMismatch)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        write_json(&dir.join("order.json"), &self.order)?;
        write_json(&dir.join("scaler.json"), &self.scaler)?;
        for (name, model) in self.manifest.models.iter().zip(&self.models) {
            model::write_model(model, dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let order: SignalOrder = read_json(&dir.join("order.json"))?;
        let scaler: Scaler = read_json(&dir.join("scaler.json"))?;
        if order.len() != manifest.m || scaler.m() != manifest.m {
            return Err(PipelineError::ArtifactMismatch("order or scaler does not match the manifest".into()));
        }
        order.validate().map_err(|e| PipelineError::ArtifactMismatch(e.to_string()))?;
        if manifest.models.len() != manifest.periods.len() {
            return Err(PipelineError::ArtifactMismatch("one model per period expected".into()));
        }
        let mut models = Vec::with_capacity(manifest.models.len());
        for (name, &period) in manifest.models.iter().zip(&manifest.periods) {
            let path = dir.join(name);
            if !path.exists() {
                return Err(PipelineError::MissingArtifact(path));
            }
            let cfg = AeConfig { m: manifest.m, w: manifest.w, ..manifest.ae.clone() };
            models.push(model::read_model(&path, &cfg, Some(period))?);
        }
        Ok(Self { manifest, order, scaler, models })
    }
}

pub fn load_records(path: &Path, format: LogFormat) -> Result<ingest::ParsedLog> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    Ok(ingest::parse_log(path, format)?)
}

/// Scaled copies of `records`.
fn scaled(records: &[SignalRecord], scaler: &Scaler) -> Result<Vec<SignalRecord>> {
    let m = scaler.m();
    records
        .iter()
        .map(|r| {
            if let Some(&(i, _)) = r.values.iter().find(|(i, _)| *i >= m) {
                return Err(PipelineError::Preprocess(PreprocessError::SignalOutOfRange(i)));
            }
            let mut r = r.clone();
            scaler.apply(&mut r);
            Ok(r)
        })
        .collect()
}

/// Forward-filled per-signal series after every signal has been seen,
/// thinned to at most `max_columns` columns.
pub fn forward_filled_series(records: &[SignalRecord], m: usize, max_columns: usize) -> Vec<Vec<f64>> {
    let mut current = vec![f64::NAN; m];
    let mut missing = m;
    let first_full = records.iter().position(|r| {
        for &(i, v) in &r.values {
            if current[i].is_nan() {
                missing -= 1;
            }
            current[i] = v;
        }
        missing == 0
    });
    let Some(first_full) = first_full else {
        return vec![Vec::new(); m];
    };
    let remaining = records.len() - first_full;
    let stride = remaining.div_ceil(max_columns.max(1)).max(1);
    let mut rows = vec![Vec::with_capacity(remaining / stride + 1); m];
    for (k, r) in records[first_full..].iter().enumerate() {
        if k > 0 {
            for &(i, v) in &r.values {
                current[i] = v;
            }
        }
        if k % stride == 0 {
            for (row, &v) in rows.iter_mut().zip(&current) {
                row.push(v);
            }
        }
    }
    rows
}

/// Index of the first record after which a queue of `depth` is warm.
fn warm_index(records: &[SignalRecord], m: usize, depth: usize) -> Option<usize> {
    let mut seen = vec![false; m];
    let mut missing = m;
    let all_seen = records.iter().position(|r| {
        for &(i, _) in &r.values {
            if !std::mem::replace(&mut seen[i], true) {
                missing -= 1;
            }
        }
        missing == 0
    })?;
    let idx = all_seen.max(depth.saturating_sub(1));
    (idx < records.len()).then_some(idx)
}

/// Views for every period, sampled after warm-up every `stride` records
/// (widened so at most `limit` windows are kept). `out[x][k]` is window `k`
/// under period `x`.
pub fn extract_views(
    records: &[SignalRecord],
    order: &SignalOrder,
    w: usize,
    periods: &[usize],
    stride: usize,
    limit: usize,
) -> Result<Vec<Vec<View>>> {
    let m = order.len();
    let depth = queue_depth(w, periods);
    let mut out = vec![Vec::new(); periods.len()];
    let Some(first) = warm_index(records, m, depth) else {
        return Ok(out);
    };
    let available = records.len() - first;
    let stride = stride.max(available.div_ceil(limit.max(1)));
    let mut queue = DataQueue::with_order(depth, order);
    for (i, r) in records.iter().enumerate() {
        queue.push(r);
        if i >= first && (i - first) % stride == 0 {
            for (x, views) in preprocess::sample_views(&queue, periods, w)?.into_iter().enumerate() {
                out[x].push(views);
            }
        }
    }
    Ok(out)
}

/// Fits scaler and order on attack-free `records`, then trains one model per
/// period.
pub fn train(cfg: &RunConfig, records: &[SignalRecord], signal_names: &[String]) -> Result<Artifacts> {
    cfg.validate()?;
    let declared = cfg.m.unwrap_or_else(|| records.iter().flat_map(|r| r.values.iter().map(|&(i, _)| i + 1)).max().unwrap_or(0));
    let catalog = ingest::build_catalog(records, declared).map_err(|e| match e {
        IngestError::CardinalityMismatch { declared, found } if cfg.m.is_some() => {
            PipelineError::ArtifactMismatch(format!("config declares m={declared}, training data has {found} signals"))
        }
        e => PipelineError::Ingest(e),
    })?;
    if let Some(index) = records.iter().position(|r| r.label.is_attack()) {
        return Err(PipelineError::Ingest(IngestError::AttackInTraining { index, split: "train" }));
    }
    let m = catalog.m;
    let scaler = Scaler::fit_records(records, m)?;
    let data = scaled(records, &scaler)?;
    let series = forward_filled_series(&data, m, cfg.sampling.max_order_columns);
    let order = preprocess::fit_order(&series)?;

    let views = extract_views(&data, &order, cfg.w, &cfg.periods, cfg.sampling.train_stride, cfg.sampling.max_train_windows)?;
    let total = views[0].len();
    if total == 0 {
        return Err(PipelineError::Config(format!(
            "{} training records never fill a queue of depth {}",
            records.len(),
            cfg.depth()
        )));
    }
    let n_val = (total as f64 * cfg.sampling.validation_fraction).round() as usize;
    let n_train = total - n_val;
    let mut models = Vec::with_capacity(cfg.periods.len());
    for (x, (&period, period_views)) in cfg.periods.iter().zip(&views).enumerate() {
        let mut model = AeModel::build(cfg.ae_config(m, x), period)?;
        model.train(&period_views[..n_train], &period_views[n_train..])?;
        models.push(model);
    }
    let names = if signal_names.len() == m { signal_names.to_vec() } else { catalog.signal_names.clone() };
    Ok(Artifacts {
        manifest: Manifest {
            m,
            w: cfg.w,
            periods: cfg.periods.clone(),
            signal_names: names,
            models: cfg.periods.iter().map(|t| format!("ae_t{t}.bin")).collect(),
            ae: AeConfig { m, w: cfg.w, seed: 0, ..cfg.ae.clone() },
            train_records: records.len(),
            train_windows: n_train,
            validation_windows: n_val,
        },
        order,
        scaler,
        models,
    })
}

/// Loss matrices of the given aligned views under every model, batched.
fn score_views(artifacts: &Artifacts, views: &[Vec<View>], batch: usize) -> Result<Vec<Vec<LossMatrix>>> {
    let mut out = Vec::with_capacity(views.len());
    for (model, period_views) in artifacts.models.iter().zip(views) {
        let mut losses = Vec::with_capacity(period_views.len());
        for chunk in period_views.chunks(batch) {
            let refs: Vec<&View> = chunk.iter().collect();
            losses.extend(model.score_batch(&refs)?);
        }
        out.push(losses);
    }
    Ok(out)
}

/// Staged threshold calibration on attack-free `records`.
pub fn calibrate(cfg: &RunConfig, artifacts: &Artifacts, records: &[SignalRecord]) -> Result<Calibration> {
    cfg.validate()?;
    if let Some(index) = records.iter().position(|r| r.label.is_attack()) {
        return Err(PipelineError::Ingest(IngestError::AttackInTraining { index, split: "calibration" }));
    }
    let man = &artifacts.manifest;
    let data = scaled(records, &artifacts.scaler)?;
    let views = extract_views(
        &data,
        &artifacts.order,
        man.w,
        &man.periods,
        cfg.sampling.calibration_stride,
        cfg.sampling.max_calibration_windows,
    )?;
    let losses = score_views(artifacts, &views, cfg.sampling.batch)?;
    Ok(detect::calibrate(&losses, &man.periods, cfg.percentiles)?)
}

/// One deployment-time verdict with the timestamp of its newest record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedVerdict {
    pub time: f64,
    pub verdict: Verdict,
}

/// Streaming detector: push records one at a time, verdicts come out in
/// batches once the queue is warm.
pub struct Detector<'a> {
    artifacts: &'a Artifacts,
    thresholds: &'a ThresholdSet,
    queue: DataQueue,
    stride: usize,
    batch: usize,
    warm_since: Option<u64>,
    pending: Vec<(f64, Vec<View>)>,
}

impl<'a> Detector<'a> {
    pub fn new(artifacts: &'a Artifacts, thresholds: &'a ThresholdSet, stride: usize, batch: usize) -> Result<Self> {
        artifacts.check_thresholds(thresholds)?;
        Ok(Self {
            artifacts,
            thresholds,
            queue: DataQueue::with_order(artifacts.depth(), &artifacts.order),
            stride: stride.max(1),
            batch: batch.max(1),
            warm_since: None,
            pending: Vec::new(),
        })
    }

    /// Feeds one raw (unscaled) record; returns verdicts whenever a batch
    /// fills up.
    pub fn push(&mut self, record: &SignalRecord) -> Result<Vec<TimedVerdict>> {
        let m = self.artifacts.m();
        if let Some(&(i, _)) = record.values.iter().find(|(i, _)| *i >= m) {
            return Err(PipelineError::Preprocess(PreprocessError::SignalOutOfRange(i)));
        }
        let mut r = record.clone();
        self.artifacts.scaler.apply(&mut r);
        self.queue.push(&r);
        if !self.queue.is_warm() {
            return Ok(Vec::new());
        }
        let step = self.queue.steps() - 1;
        let since = *self.warm_since.get_or_insert(step);
        if (step - since).is_multiple_of(self.stride as u64) {
            let man = &self.artifacts.manifest;
            self.pending.push((record.time, preprocess::sample_views(&self.queue, &man.periods, man.w)?));
        }
        if self.pending.len() >= self.batch {
            self.flush()
        } else {
            Ok(Vec::new())
        }
    }

    /// Scores every buffered window.
    pub fn flush(&mut self) -> Result<Vec<TimedVerdict>> {
        if self.pending.is_empty() {
            return Ok(Vec::new());
        }
        let pending = std::mem::take(&mut self.pending);
        let mut per_model = Vec::with_capacity(self.artifacts.models.len());
        for (x, model) in self.artifacts.models.iter().enumerate() {
            let refs: Vec<&View> = pending.iter().map(|(_, v)| &v[x]).collect();
            per_model.push(model.score_batch(&refs)?);
        }
        let mut out = Vec::with_capacity(pending.len());
        for (k, (time, _)) in pending.iter().enumerate() {
            let losses: Vec<&LossMatrix> = per_model.iter().map(|l| &l[k]).collect();
            out.push(TimedVerdict { time: *time, verdict: self.thresholds.score(&losses)? });
        }
        Ok(out)
    }
}

/// Runs the detector over a whole trace.
pub fn detect(
    artifacts: &Artifacts,
    thresholds: &ThresholdSet,
    records: &[SignalRecord],
    stride: usize,
    batch: usize,
) -> Result<Vec<TimedVerdict>> {
    let mut detector = Detector::new(artifacts, thresholds, stride, batch)?;
    let mut out = Vec::new();
    for r in records {
        out.extend(detector.push(r)?);
    }
    out.extend(detector.flush()?);
    Ok(out)
}

fn verdict_header(n: usize) -> String {
    let mut h = String::from("origin_step,time");
    for x in 1..=n {
        h.push_str(&format!(",P_{x}"));
    }
    h.push_str(",P_ens,attack");
    h
}

fn verdict_row(v: &TimedVerdict) -> String {
    let mut row = format!("{},{}", v.verdict.origin_step, v.time);
    for p in &v.verdict.per_ae_scores {
        row.push_str(&format!(",{p}"));
    }
    row.push_str(&format!(",{},{}", v.verdict.ensemble_score, u8::from(v.verdict.attack)));
    row
}

/// Streams a trace through the detector, writing one CSV row per verdict and
/// flushing after each so the file can be followed live.
pub fn detect_to_csv(
    artifacts: &Artifacts,
    thresholds: &ThresholdSet,
    records: impl IntoIterator<Item = std::result::Result<SignalRecord, IngestError>>,
    stride: usize,
    batch: usize,
    out: &Path,
) -> Result<usize> {
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = BufWriter::new(File::create(out)?);
    writeln!(file, "{}", verdict_header(artifacts.models.len()))?;
    let mut detector = Detector::new(artifacts, thresholds, stride, batch)?;
    let mut rows = 0;
    let mut emit = |verdicts: Vec<TimedVerdict>, file: &mut BufWriter<File>| -> Result<()> {
        for v in &verdicts {
            writeln!(file, "{}", verdict_row(v))?;
            file.flush()?;
            rows += 1;
        }
        Ok(())
    };
    for r in records {
        let verdicts = detector.push(&r?)?;
        emit(verdicts, &mut file)?;
    }
    emit(detector.flush()?, &mut file)?;
    Ok(rows)
}

/// Parsed verdict row.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub origin_step: u64,
    pub time: f64,
    pub per_ae: Vec<f64>,
    pub p_ens: f64,
    pub attack: bool,
}

pub fn read_verdicts(path: &Path) -> Result<Vec<VerdictRow>> {
    let file = File::open(path).map_err(|_| PipelineError::MissingArtifact(path.to_path_buf()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let cols = header.split(',').count();
    if cols < 5 || !header.starts_with("origin_step,time") {
        return Err(PipelineError::ArtifactMismatch(format!("{} is not a verdict file", path.display())));
    }
    let n = cols - 4;
    let bad = |line: usize| PipelineError::ArtifactMismatch(format!("{}:{line}: malformed verdict row", path.display()));
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            return Err(bad(k + 2));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(k + 2));
        out.push(VerdictRow {
            origin_step: f[0].parse().map_err(|_| bad(k + 2))?,
            time: num(f[1])?,
            per_ae: f[2..2 + n].iter().map(|s| num(s)).collect::<Result<_>>()?,
            p_ens: num(f[2 + n])?,
            attack: f[3 + n] == "1",
        });
    }
    Ok(out)
}

/// Joins verdicts with the labelled trace they were computed on.
pub fn scored_windows(verdicts: &[VerdictRow], labels: &[bool], span: usize) -> Result<Vec<ScoredWindow>> {
    let truth = eval::window_truth(labels, span);
    verdicts
        .iter()
        .map(|v| {
            let t = *truth
                .get(v.origin_step as usize)
                .ok_or_else(|| PipelineError::ArtifactMismatch(format!("verdict step {} beyond the trace", v.origin_step)))?;
            Ok(ScoredWindow { origin_step: v.origin_step, time: v.time, per_ae: v.per_ae.clone(), p_ens: v.p_ens, truth: t })
        })
        .collect()
}

pub fn timed_to_rows(verdicts: &[TimedVerdict]) -> Vec<VerdictRow> {
    verdicts
        .iter()
        .map(|v| VerdictRow {
            origin_step: v.verdict.origin_step,
            time: v.time,
            per_ae: v.verdict.per_ae_scores.clone(),
            p_ens: v.verdict.ensemble_score,
            attack: v.verdict.attack,
        })
        .collect()
}

/// Files written by [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub signal_names: Vec<String>,
    pub train: String,
    pub calibration: Option<String>,
    pub holdout: Option<String>,
    /// Attacked files by name, each with an `<name>.events.json` sidecar.
    pub tests: Vec<String>,
    pub step_seconds: f64,
}

/// Generates a scenario into `out_dir` as canonical CSV plus event lists.
pub fn synthesize(scenario: &Scenario, out_dir: &Path) -> Result<DatasetManifest> {
    let traces = scenario.generate()?;
    fs::create_dir_all(out_dir)?;
    let names = scenario.traffic.signal_names();
    let mut man = DatasetManifest {
        signal_names: names.clone(),
        train: String::new(),
        calibration: None,
        holdout: None,
        tests: Vec::new(),
        step_seconds: scenario.traffic.step_seconds,
    };
    for t in &traces {
        let file = format!("{}.csv", t.name);
        ingest::write_canonical_file(out_dir.join(&file), &names, &t.records)?;
        match t.name.as_str() {
            "train" => man.train = file,
            "calibration" => man.calibration = Some(file),
            "holdout" => man.holdout = Some(file),
            _ => {
                write_json(&out_dir.join(format!("{}.events.json", t.name)), &t.events)?;
                man.tests.push(t.name.clone());
            }
        }
    }
    write_json(&out_dir.join("dataset.json"), &man)?;
    Ok(man)
}

pub fn load_dataset(dir: &Path) -> Result<DatasetManifest> {
    read_json(&dir.join("dataset.json"))
}

pub fn load_events(path: &Path) -> Result<Vec<AttackEvent>> {
    read_json(path)
}

pub fn load_thresholds(path: &Path) -> Result<ThresholdSet> {
    read_json(path)
}

pub fn save_thresholds(path: &Path, thresholds: &ThresholdSet) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_json(path, thresholds)
}

/// Builds the evaluation report for every test of a synthetic dataset whose
/// verdict file `<verdicts_dir>/<name>.csv` exists, plus optional clean runs.
pub fn evaluate_dataset(
    data_dir: &Path,
    verdicts_dir: &Path,
    thresholds: &ThresholdSet,
    budgets: &[f64],
    format: LogFormat,
    out_dir: &Path,
) -> Result<Report> {
    let dataset = load_dataset(data_dir)?;
    let span = queue_depth(thresholds.w, &thresholds.periods);
    let mut names: Vec<(String, bool)> = dataset.tests.iter().map(|t| (t.clone(), true)).collect();
    if let Some(h) = &dataset.holdout {
        names.push((h.trim_end_matches(".csv").to_string(), false));
    }
    let mut runs = Vec::new();
    for (name, required) in names {
        let verdict_path = verdicts_dir.join(format!("{name}.csv"));
        if !verdict_path.exists() {
            if required {
                return Err(PipelineError::Eval(EvalError::MissingArtifacts(verdict_path.display().to_string())));
            }
            continue;
        }
        let log = load_records(&data_dir.join(format!("{name}.csv")), format)?;
        let labels: Vec<bool> = log.records.iter().map(|r| r.label.is_attack()).collect();
        let verdicts = read_verdicts(&verdict_path)?;
        let windows = scored_windows(&verdicts, &labels, span)?;
        let events_path = data_dir.join(format!("{name}.events.json"));
        let events = if events_path.exists() { load_events(&events_path)? } else { Vec::new() };
        runs.push(AttackRun { name, windows, events, span: span as u64 });
    }
    Ok(eval::report(&runs, budgets, thresholds.r_signal, out_dir)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;

    fn rec(values: &[(usize, f64)]) -> SignalRecord {
        SignalRecord { time: 0.0, msg_id: "a".into(), values: values.to_vec(), label: Label::Normal }
    }

    #[test]
    fn series_starts_once_all_signals_seen() {
        let records = [rec(&[(0, 1.0)]), rec(&[(1, 2.0)]), rec(&[(0, 3.0)]), rec(&[(1, 4.0)])];
        let rows = forward_filled_series(&records, 2, 100);
        assert_eq!(rows, vec![vec![1.0, 3.0, 3.0], vec![2.0, 2.0, 4.0]]);
        let thinned = forward_filled_series(&records, 2, 2);
        assert_eq!(thinned[0], vec![1.0, 3.0]);
    }

    #[test]
    fn warm_index_accounts_for_depth_and_signals() {
        let records: Vec<_> = (0..20).map(|i| rec(&[(i % 2, 0.5)])).collect();
        assert_eq!(warm_index(&records, 2, 5), Some(4));
        assert_eq!(warm_index(&records, 2, 1), Some(1));
        assert_eq!(warm_index(&records, 3, 1), None);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::ArtifactMismatch("x".into()).exit_code(), 4);
        assert_eq!(PipelineError::Ingest(IngestError::EmptyStream).exit_code(), 3);
    }

    #[test]
    fn verdict_rows_round_trip() {
        let v = TimedVerdict {
            time: 1.25,
            verdict: Verdict {
                origin_step: 7,
                per_ae_scores: vec![0.5, 0.25],
                ensemble_score: 0.375,
                signal_flags: vec![],
                attack: true,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        fs::write(&path, format!("{}\n{}\n", verdict_header(2), verdict_row(&v))).unwrap();
        assert_eq!(read_verdicts(&path).unwrap(), timed_to_rows(&[v]));
    }
}

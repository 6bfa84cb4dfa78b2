//! Command implementations behind the `controlgan` binary, the run config
//! file, and the checkpoint format.

mod checkpoint;
mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{AnyCheckpoint, Checkpoint, Payload, FORMAT_VERSION, MAGIC};
pub use config::{RunConfig, SYNTHETIC};

use crate::data::{make_synthetic, sample_noise, DataError, LabeledDataset};
use crate::diffcore::{DType, Real, Tensor};
use crate::eval::{self, EvalError, SweepSpec, DEFAULT_SWEEP_VALUES};
use crate::format::sig6;
use crate::gradcheck::{gradcheck, GradcheckReport};
use crate::nn::{generator_forward, Layout, ParamSet};
use crate::trainer::{
    init_state, pretrain_classifier, run, Callbacks, MetricsRow, Mode, TrainError, TrainState,
    METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical abort: {0}")]
    Numeric(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Data(DataError),
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Eval(EvalError),
}

impl CliError {
    /// 0 success, 1 usage or config, 2 numerical abort, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 2,
            CliError::Io(_) | CliError::Data(DataError::Io(_)) => 3,
            CliError::Eval(EvalError::Io(_) | EvalError::Image(_)) => 3,
            _ => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Data(d) => CliError::Data(d),
            other => CliError::Train(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            other => CliError::Eval(other),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn config_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Per-invocation overrides of config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub mode: Option<Mode>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        cfg.validate()
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<(RunConfig, LabeledDataset)> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg)?;
    let data = cfg.load_dataset(&config_dir(path))?;
    Ok((cfg, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub final_loss: f64,
    pub iterations: u64,
}

/// Pre-trains the classifier and writes a classifier checkpoint to `out`.
pub fn cmd_pretrain(
    config_path: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<PretrainOutcome> {
    let (cfg, data) = load_config(config_path, overrides)?;
    match cfg.precision {
        DType::F64 => pretrain_as::<f64>(cfg, &data, out),
        DType::F32 => pretrain_as::<f32>(cfg, &data, out),
    }
}

fn pretrain_as<T: Real>(
    cfg: RunConfig,
    data: &LabeledDataset,
    out: &Path,
) -> Result<PretrainOutcome> {
    let p = pretrain_classifier::<T>(&cfg.train_config(), data)?;
    let outcome = PretrainOutcome {
        final_loss: p.final_loss,
        iterations: p.iterations,
    };
    Checkpoint {
        config: cfg,
        payload: Payload::Classifier {
            params: p.params,
            final_loss: p.final_loss,
        },
    }
    .save(out)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    pub overrides: Overrides,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    /// Absent when no iteration ran.
    pub metrics: Option<PathBuf>,
    pub iteration: u64,
    pub warnings: Vec<String>,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const ABORT_CHECKPOINT: &str = "abort.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Trains per the config's mode, writing `latest.ckpt` every
/// `checkpoint_every` iterations, `metrics.csv`, and `final.ckpt` (or
/// `abort.ckpt` on a numerical failure) into `out_dir`.
pub fn cmd_train(
    config_path: &Path,
    classifier: Option<&Path>,
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let (cfg, data) = load_config(config_path, &opts.overrides)?;
    match cfg.precision {
        DType::F64 => train_as::<f64>(cfg, &data, classifier, out_dir, opts),
        DType::F32 => train_as::<f32>(cfg, &data, classifier, out_dir, opts),
    }
}

struct Recorder<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    lines: Vec<String>,
    error: Option<CliError>,
}

impl Recorder<'_> {
    fn write_metrics(&self) -> Result<PathBuf> {
        let path = self.dir.join(METRICS_FILE);
        let mut text = String::from(METRICS_HEADER);
        text.push('\n');
        for l in &self.lines {
            text.push_str(l);
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(path)
    }

    fn snapshot<T: Real>(&self, state: &TrainState<T>, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        Checkpoint {
            config: self.cfg.clone(),
            payload: Payload::Training(Box::new(state.clone())),
        }
        .save(&path)?;
        Ok(path)
    }
}

impl<T: Real> Callbacks<T> for Recorder<'_> {
    fn on_metrics(&mut self, row: &MetricsRow) {
        self.lines.push(row.to_csv());
    }

    fn on_iteration(&mut self, state: &TrainState<T>) {
        let every = self.cfg.checkpoint_every;
        if self.error.is_none() && every > 0 && state.iteration.is_multiple_of(every) {
            let res = self
                .write_metrics()
                .and_then(|_| self.snapshot(state, LATEST_CHECKPOINT));
            if let Err(e) = res {
                self.error = Some(e);
            }
        }
    }
}

/// Metrics lines an uninterrupted run would have written up to `iteration`.
fn resumable_lines(path: &Path, iteration: u64, log_every: u64) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(CliError::Usage(format!(
            "{} does not start with the metrics header",
            path.display()
        )));
    }
    Ok(lines
        .filter(|l| {
            let it = l.split(',').next().and_then(|s| s.parse::<u64>().ok());
            it.is_some_and(|it| it <= iteration && it % log_every == 0)
        })
        .map(str::to_string)
        .collect())
}

fn classifier_params<T: Real>(path: &Path) -> Result<ParamSet<T>> {
    match AnyCheckpoint::load(path)?.into_precision::<T>()?.payload {
        Payload::Classifier { params, .. } => Ok(params),
        Payload::Training(s) => s
            .params_c
            .ok_or_else(|| CliError::Checkpoint(format!("{} holds no classifier", path.display()))),
    }
}

fn train_as<T: Real>(
    cfg: RunConfig,
    data: &LabeledDataset,
    classifier: Option<&Path>,
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let tc = cfg.train_config();
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut warnings = Vec::new();
    let mut rec = Recorder {
        cfg: &cfg,
        dir: out_dir,
        lines: Vec::new(),
        error: None,
    };
    let mut state: TrainState<T> = if opts.resume {
        let latest = out_dir.join(LATEST_CHECKPOINT);
        if !latest.exists() {
            return Err(CliError::Usage(format!(
                "--resume given but {} does not exist",
                latest.display()
            )));
        }
        let ckpt = AnyCheckpoint::load(&latest)?.into_precision::<T>()?;
        let mut saved = ckpt.config.clone();
        saved.iterations = cfg.iterations;
        if saved != cfg {
            return Err(CliError::Config(format!(
                "config differs from the one in {} (only `iterations` may change on resume)",
                latest.display()
            )));
        }
        let Payload::Training(state) = ckpt.payload else {
            return Err(CliError::Checkpoint(format!(
                "{} is not a training checkpoint",
                latest.display()
            )));
        };
        if state.iteration > cfg.iterations {
            return Err(CliError::Usage(format!(
                "checkpoint is at iteration {} beyond the requested {}",
                state.iteration, cfg.iterations
            )));
        }
        rec.lines = resumable_lines(&out_dir.join(METRICS_FILE), state.iteration, cfg.log_every)?;
        *state
    } else {
        let theta_c = match (tc.mode, classifier) {
            (Mode::Controlgan, Some(p)) => Some(classifier_params::<T>(p)?),
            (Mode::Controlgan, None) => {
                return Err(CliError::Usage(
                    "mode controlgan needs a classifier checkpoint (--classifier)".into(),
                ))
            }
            (Mode::Cgan, Some(p)) => {
                warnings.push(format!(
                    "mode cgan ignores the classifier checkpoint {}",
                    p.display()
                ));
                None
            }
            (Mode::Cgan, None) => None,
        };
        init_state(&tc, data, theta_c)?
    };

    if state.iteration == tc.iterations && !opts.resume {
        let path = rec.snapshot(&state, FINAL_CHECKPOINT)?;
        return Ok(TrainOutcome {
            final_checkpoint: path,
            metrics: None,
            iteration: state.iteration,
            warnings,
        });
    }
    let result = run(&tc, data, &mut state, &mut rec);
    if let Some(e) = rec.error.take() {
        return Err(e);
    }
    if let Err(e) = result {
        rec.write_metrics()?;
        rec.snapshot(&state, ABORT_CHECKPOINT)?;
        return Err(e.into());
    }
    let metrics = rec.write_metrics()?;
    let path = rec.snapshot(&state, FINAL_CHECKPOINT)?;
    Ok(TrainOutcome {
        final_checkpoint: path,
        metrics: Some(metrics),
        iteration: state.iteration,
        warnings,
    })
}

/// Parses a comma-separated list of reals.
pub fn parse_reals(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CliError::Usage(format!("{what}: `{}` is not a finite number", p.trim()))
                })
        })
        .collect()
}

fn parse_labels(s: &str, label_dim: usize) -> Result<Vec<f64>> {
    let l = parse_reals(s, "--labels")?;
    if l.len() != label_dim {
        return Err(CliError::Usage(format!(
            "--labels has {} value(s), expected {label_dim} (one per label)",
            l.len()
        )));
    }
    Ok(l)
}

fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

/// `rows x cols == n` with `rows` the largest divisor not above `sqrt(n)`.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let rows = (1..=n)
        .take_while(|r| r * r <= n)
        .filter(|r| n.is_multiple_of(*r))
        .last()
        .unwrap_or(1);
    (rows, n / rows)
}

fn write_samples_csv(samples: &Tensor<f64>, path: &Path) -> Result<()> {
    let n = samples.shape()[0];
    let w = samples.numel() / n.max(1);
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| io(path, e))?);
    let header: Vec<String> = (0..w).map(|j| format!("x{j}")).collect();
    let mut text = header.join(",");
    text.push('\n');
    for s in samples.data().chunks(w.max(1)) {
        let row: Vec<String> = s.iter().map(|&v| sig6(v)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| io(path, e))?;
    f.flush().map_err(|e| io(path, e))
}

/// `n` samples for one label vector, written as an image grid (image
/// extension) or as CSV of normalized values (anything else).
pub fn cmd_generate(ckpt: &Path, labels: &str, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(CliError::Usage("-n must be positive".into()));
    }
    let g = AnyCheckpoint::load(ckpt)?.generator_f64()?;
    let l = parse_labels(labels, g.spec.label_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::trainer::derive_seed(seed, "generate"));
    let z = sample_noise::<f64, _>(&mut rng, n, g.spec.z_dim);
    let lt = Tensor::new(vec![n, l.len()], l.repeat(n)).expect("label batch shape");
    let samples = generator_forward(&g, &z, &lt).map_err(EvalError::from)?;
    if is_image_path(out) {
        let (rows, cols) = grid_shape(n);
        eval::emit_grid(&samples, rows, cols, out)?;
        Ok(())
    } else {
        write_samples_csv(&samples, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub values: Vec<f64>,
    pub projections: Option<Vec<f64>>,
    pub files: Vec<PathBuf>,
}

pub const SWEEP_GRID: &str = "sweep.png";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Sweeps one label over `values` with shared noise. Writes `sweep.png`
/// (image data; one row per noise draw, one column per value) and
/// `sweep.csv` (`value,mean_projection`, the projection only for synthetic
/// data).
pub fn cmd_sweep(
    ckpt: &Path,
    label_index: usize,
    values: Option<&str>,
    labels: Option<&str>,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SweepOutcome> {
    let any = AnyCheckpoint::load(ckpt)?;
    let g = any.generator_f64()?;
    let k = g.spec.label_dim;
    let fixed = match labels {
        Some(s) => parse_labels(s, k)?,
        None => vec![0.0; k],
    };
    let values = match values {
        Some(s) => parse_reals(s, "--values")?,
        None => DEFAULT_SWEEP_VALUES.to_vec(),
    };
    let spec = SweepSpec {
        label_index,
        values,
        fixed_labels: fixed,
        n_z: n,
        seed,
    };
    spec.validate(k)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = any.config();
    let truth = if cfg.dataset == SYNTHETIC {
        let data = make_synthetic(&cfg.synthetic_spec())?;
        data.descriptor.synthetic().cloned()
    } else {
        None
    };
    let points = eval::sweep(&g, &spec, truth.as_ref())?;
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut files = Vec::new();
    if let Layout::Image { .. } = g.spec.layout {
        let shape = points[0].samples.shape().to_vec();
        let per = points[0].samples.numel() / n;
        let cols = points.len();
        let mut data = Vec::with_capacity(per * n * cols);
        for row in 0..n {
            for p in &points {
                data.extend_from_slice(&p.samples.data()[row * per..(row + 1) * per]);
            }
        }
        let mut tiled = shape;
        tiled[0] = n * cols;
        let t = Tensor::new(tiled, data).expect("grid shape");
        let path = out_dir.join(SWEEP_GRID);
        eval::emit_grid(&t, n, cols, &path)?;
        files.push(path);
    }
    let path = out_dir.join(SWEEP_CSV);
    let mut text = String::from("value,mean_projection\n");
    for p in &points {
        let proj = p.mean_projection.map(sig6).unwrap_or_default();
        text.push_str(&format!("{},{proj}\n", sig6(p.value)));
    }
    fs::write(&path, text).map_err(|e| io(&path, e))?;
    files.push(path);
    Ok(SweepOutcome {
        values: spec.values.clone(),
        projections: points.iter().map(|p| p.mean_projection).collect(),
        files,
    })
}

/// Finite-difference audit at 64-bit.
pub fn cmd_gradcheck(seed: u64, trials: usize) -> GradcheckReport {
    gradcheck(seed, trials)
}

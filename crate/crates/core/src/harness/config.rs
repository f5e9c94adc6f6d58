//! Run configuration files.
//!
//! One `key = value` pair per line, keys are flat dotted names. `#` starts a
//! comment anywhere on a line, blank lines are ignored, values may be wrapped
//! in double quotes, lists are comma separated. Every key may appear at most
//! once and every key present must be consumed by the configuration it
//! describes; all problems are reported together.
//!
//! ```text
//! # tvlars on synthetic blobs
//! dataset.kind = blobs
//! dataset.n_per_class = 1000
//! model.hidden = 64
//! optimizer.kind = tvlars
//! optimizer.lr = 1.0
//! schedule.lambda = 0.001
//! schedule.delay_epochs = 2
//! train.epochs = 30
//! train.batch_size = 512
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{synth_blobs, DataError, Dataset};
use crate::nn::InitKind;
use crate::optim::{LambParams, MomentumStyle, OptimizerConfig, OptimizerKind};
use crate::schedule::{PolyConfig, TvConfig, WarmupConfig};

use super::HarnessError;

/// Every problem found in a config, each tagged with its line when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} config problem(s):", self.problems.len())?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        n_per_class: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    Cifar10 {
        paths: Vec<PathBuf>,
        /// Keep only the first `limit` records.
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset, DataError> {
        match self {
            DatasetSpec::Blobs {
                n_per_class,
                classes,
                dim,
                spread,
                seed,
            } => synth_blobs(*n_per_class, *classes, *dim, *spread, *seed),
            DatasetSpec::Cifar10 { paths, limit } => {
                let ds = crate::data::load_cifar10_dataset(paths)?;
                match limit {
                    Some(l) if *l < ds.len() => ds.subset(&(0..*l).collect::<Vec<_>>()),
                    _ => Ok(ds),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrScaling {
    None,
    Linear,
    Sqrt,
}

/// Schedule parameters as written in the file; the horizon and the target
/// rate are filled in once the run knows its step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    TimeVarying {
        alpha: f64,
        lambda: f64,
        delay_epochs: f64,
        gamma_min: f64,
    },
    WarmupCosine {
        warmup_epochs: f64,
        gamma_min: f64,
    },
    Poly {
        power: f64,
        gamma_end: f64,
    },
    Constant,
}

impl ScheduleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleSpec::TimeVarying { .. } => "tvlars",
            ScheduleSpec::WarmupCosine { .. } => "warmup_cosine",
            ScheduleSpec::Poly { .. } => "poly",
            ScheduleSpec::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSpec {
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub eval_fraction: f64,
    pub hidden: Vec<usize>,
    pub init: InitKind,
    pub init_seed: u64,
    /// L2 penalty folded into the loss and its gradient.
    pub l2: f64,
    pub optimizer: OptimizerKind,
    /// `batch_size` here is the training batch size.
    pub optim: OptimizerConfig,
    /// Base rate before batch-size scaling.
    pub lr: f64,
    pub lr_scaling: LrScaling,
    pub schedule: ScheduleSpec,
    pub epochs: u64,
    pub eval_every: u64,
    pub drop_last: bool,
    pub shuffle: bool,
    pub seed: u64,
    /// Record norms every this many steps.
    pub norm_every: u64,
    pub output_dir: PathBuf,
    /// Write real elapsed time to `wall_ms`; off by default so outputs are
    /// byte-reproducible.
    pub wall_clock: bool,
    pub variance: VarianceSpec,
}

/// Square-root batch scaling: `gamma_base * sqrt(batch / base_batch)`.
pub fn scaled_lr(gamma_base: f64, batch: usize, base_batch: usize) -> f64 {
    assert!(batch >= 1 && base_batch >= 1, "batch sizes must be positive");
    gamma_base * (batch as f64 / base_batch as f64).sqrt()
}

impl RunConfig {
    /// Target rate after batch-size scaling.
    pub fn gamma_target(&self) -> f64 {
        let (b, b0) = (self.optim.batch_size, self.optim.base_batch_size);
        match self.lr_scaling {
            LrScaling::None => self.lr,
            LrScaling::Linear => self.lr * b as f64 / b0 as f64,
            LrScaling::Sqrt => scaled_lr(self.lr, b, b0),
        }
    }

    /// Resolved time-varying schedule, if this run uses one.
    pub fn tv_config(&self) -> Option<TvConfig> {
        match self.schedule {
            ScheduleSpec::TimeVarying {
                alpha,
                lambda,
                delay_epochs,
                gamma_min,
            } => Some(TvConfig {
                alpha,
                lambda,
                delay_epochs,
                gamma_min,
                gamma_target: self.gamma_target(),
            }),
            _ => None,
        }
    }

    pub fn warmup_config(&self, steps_per_epoch: u64) -> Option<WarmupConfig> {
        match self.schedule {
            ScheduleSpec::WarmupCosine {
                warmup_epochs,
                gamma_min,
            } => Some(WarmupConfig {
                gamma_scale: self.gamma_target(),
                d_wa: (warmup_epochs * steps_per_epoch as f64).round() as u64,
                horizon: self.epochs * steps_per_epoch,
                gamma_min,
            }),
            _ => None,
        }
    }

    pub fn poly_config(&self, steps_per_epoch: u64) -> Option<PolyConfig> {
        match self.schedule {
            ScheduleSpec::Poly { power, gamma_end } => Some(PolyConfig {
                gamma_start: self.gamma_target(),
                gamma_end,
                power,
                horizon: self.epochs * steps_per_epoch,
            }),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut f = Fields::lex(text);
        let cfg = build(&mut f);
        let mut problems = f.finish().err().map(|e| e.problems).unwrap_or_default();
        if let Some(Err(e)) = cfg.as_ref().map(RunConfig::validate) {
            problems.extend(e.problems);
        }
        match cfg {
            Some(cfg) if problems.is_empty() => Ok(cfg),
            _ => Err(ConfigError { problems }),
        }
    }

    /// Reads and parses a file; a relative `run.output_dir` is taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = RunConfig::parse(&text).map_err(|e| HarnessError::Config {
            path: Some(path.to_path_buf()),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let DatasetSpec::Cifar10 { paths, .. } = &mut cfg.dataset {
            for p in paths.iter_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Err(e) = self.optim.validate() {
            problems.push(e.to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("optimizer.lr must be positive, got {}", self.lr));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            problems.push(format!("dataset.eval_fraction must lie in (0, 1), got {}", self.eval_fraction));
        }
        if self.eval_every == 0 {
            problems.push("train.eval_every must be at least 1".into());
        }
        if self.norm_every == 0 {
            problems.push("train.norm_every must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            problems.push("model.hidden widths must be positive".into());
        }
        if let DatasetSpec::Blobs {
            n_per_class,
            classes,
            dim,
            spread,
            ..
        } = self.dataset
        {
            if n_per_class == 0 {
                problems.push("dataset.n_per_class must be positive".into());
            }
            if classes < 2 || classes > dim {
                problems.push(format!("dataset.classes must lie in [2, dataset.dim = {dim}], got {classes}"));
            }
            if !(spread >= 0.0 && spread.is_finite()) {
                problems.push(format!("dataset.spread must be nonnegative, got {spread}"));
            }
        }
        if let DatasetSpec::Cifar10 { paths, .. } = &self.dataset {
            if paths.is_empty() {
                problems.push("dataset.paths must name at least one file".into());
            }
        }
        let compatible = match (self.optimizer, &self.schedule) {
            (OptimizerKind::Tvlars, ScheduleSpec::TimeVarying { .. }) => true,
            (OptimizerKind::Tvlars, _) | (_, ScheduleSpec::TimeVarying { .. }) => false,
            (OptimizerKind::Lars | OptimizerKind::Lamb, ScheduleSpec::Constant) => false,
            _ => true,
        };
        if !compatible {
            problems.push(format!(
                "schedule.kind = {} cannot drive optimizer.kind = {}",
                self.schedule.name(),
                self.optimizer.name()
            ));
        }
        match self.schedule {
            ScheduleSpec::TimeVarying { .. } => {
                if let Some(Err(e)) = self.tv_config().map(|c| c.validate()) {
                    problems.push(e.to_string());
                }
            }
            ScheduleSpec::WarmupCosine {
                warmup_epochs,
                gamma_min,
            } => {
                if !(warmup_epochs > 0.0 && (self.epochs == 0 || warmup_epochs < self.epochs as f64)) {
                    problems.push(format!(
                        "schedule.warmup_epochs must lie in (0, train.epochs), got {warmup_epochs}"
                    ));
                }
                if !(gamma_min >= 0.0 && gamma_min <= self.gamma_target()) {
                    problems.push(format!(
                        "schedule.gamma_min must lie in [0, scaled lr {}], got {gamma_min}",
                        self.gamma_target()
                    ));
                }
            }
            ScheduleSpec::Poly { power, gamma_end } => {
                if !(power > 0.0 && power.is_finite()) {
                    problems.push(format!("schedule.power must be positive, got {power}"));
                }
                if !(gamma_end > 0.0 && gamma_end <= self.gamma_target()) {
                    problems.push(format!(
                        "schedule.gamma_end must lie in (0, scaled lr {}], got {gamma_end}",
                        self.gamma_target()
                    ));
                }
            }
            ScheduleSpec::Constant => {}
        }
        if self.variance.trials < crate::diagnostics::MIN_VARIANCE_TRIALS {
            problems.push(format!(
                "variance.trials must be at least {}, got {}",
                crate::diagnostics::MIN_VARIANCE_TRIALS,
                self.variance.trials
            ));
        }
        if self.variance.batch_sizes.contains(&0) {
            problems.push("variance.batch_sizes must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// Lexed key/value pairs plus the problems found so far.
struct Fields {
    entries: BTreeMap<String, Entry>,
    problems: Vec<String>,
}

impl Fields {
    fn lex(text: &str) -> Fields {
        let mut entries = BTreeMap::new();
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                problems.push(format!("line {line}: expected `key = value`"));
                continue;
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                problems.push(format!("line {line}: invalid key {key:?}"));
                continue;
            }
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            if let Some(prev) = entries.get::<str>(key) {
                let prev: &Entry = prev;
                problems.push(format!("line {line}: duplicate key {key} (first set on line {})", prev.line));
                continue;
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                    used: false,
                },
            );
        }
        Fields { entries, problems }
    }

    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Option<Option<T>> {
        match self.raw(key) {
            None => Some(None),
            Some((line, v)) => match v.parse() {
                Ok(x) => Some(Some(x)),
                Err(_) => {
                    self.problems.push(format!(
                        "line {line}: {key} = {v:?} is not a valid {}",
                        short_type_name::<T>()
                    ));
                    None
                }
            },
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Option<T> {
        self.opt(key).map(|v| v.unwrap_or(default))
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Option<T> {
        match self.opt(key)? {
            Some(v) => Some(v),
            None => {
                self.problems.push(format!("missing required key {key}"));
                None
            }
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Option<Vec<T>> {
        let Some((line, v)) = self.raw(key) else {
            return Some(default);
        };
        let mut out = Vec::new();
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.problems.push(format!(
                        "line {line}: {key} item {item:?} is not a valid {}",
                        short_type_name::<T>()
                    ));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn choice<T>(&mut self, key: &str, default: Option<&str>, parse: impl Fn(&str) -> Option<T>, allowed: &str) -> Option<T> {
        let (line, v) = match (self.raw(key), default) {
            (Some(x), _) => x,
            (None, Some(d)) => (0, d.to_string()),
            (None, None) => {
                self.problems.push(format!("missing required key {key}"));
                return None;
            }
        };
        let parsed = parse(&v);
        if parsed.is_none() {
            self.problems
                .push(format!("line {line}: {key} = {v:?} is not one of {allowed}"));
        }
        parsed
    }

    fn finish(mut self) -> Result<(), ConfigError> {
        for (key, e) in &self.entries {
            if !e.used {
                self.problems
                    .push(format!("line {}: key {key} is not used by this configuration", e.line));
            }
        }
        if self.problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError {
                problems: self.problems,
            })
        }
    }
}

fn short_type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    match full {
        "f64" => "number",
        "bool" => "boolean",
        _ if full.starts_with('u') => "nonnegative integer",
        _ => full.rsplit("::").next().unwrap_or(full),
    }
}

/// Pulls every field. Returns `None` when anything failed; the reasons are in
/// `f.problems`. Every lookup runs regardless so all problems surface.
fn build(f: &mut Fields) -> Option<RunConfig> {
    let seed = f.get("train.seed", 0u64);
    let seed_v = seed.unwrap_or(0);

    let dataset_kind = f.choice(
        "dataset.kind",
        Some("blobs"),
        |s| matches!(s, "blobs" | "cifar10").then(|| s.to_string()),
        "blobs, cifar10",
    );
    let dataset = match dataset_kind.as_deref() {
        Some("cifar10") => {
            let paths = f.list::<PathBuf>("dataset.paths", Vec::new());
            let limit = f.opt::<usize>("dataset.limit");
            match (paths, limit) {
                (Some(paths), Some(limit)) => Some(DatasetSpec::Cifar10 { paths, limit }),
                _ => None,
            }
        }
        Some(_) => {
            let n = f.get("dataset.n_per_class", 1000usize);
            let classes = f.get("dataset.classes", 4usize);
            let dim = f.get("dataset.dim", 32usize);
            let spread = f.get("dataset.spread", 0.2f64);
            let dseed = f.get("dataset.seed", seed_v);
            match (n, classes, dim, spread, dseed) {
                (Some(n_per_class), Some(classes), Some(dim), Some(spread), Some(seed)) => Some(DatasetSpec::Blobs {
                    n_per_class,
                    classes,
                    dim,
                    spread,
                    seed,
                }),
                _ => None,
            }
        }
        None => None,
    };
    let eval_fraction = f.get("dataset.eval_fraction", 0.2f64);

    let hidden = f.list("model.hidden", vec![64usize]);
    let init = f.choice(
        "model.init",
        Some("kaiming_uniform"),
        InitKind::parse,
        "xavier_uniform, xavier_normal, kaiming_uniform, kaiming_normal",
    );
    let init_seed = f.get("model.init_seed", seed_v);
    let l2 = f.get("model.l2", 0.0f64);

    let optimizer = f.choice("optimizer.kind", None, OptimizerKind::parse, "sgd, lars, lamb, tvlars");
    let defaults = OptimizerConfig::default();
    let lamb_defaults = LambParams::default();
    let eta = f.get("optimizer.eta", defaults.eta);
    let weight_decay = f.get("optimizer.weight_decay", defaults.weight_decay);
    let momentum = f.get("optimizer.momentum", defaults.momentum);
    let eps = f.get("optimizer.eps", defaults.eps);
    let base_batch_size = f.get("optimizer.base_batch_size", defaults.base_batch_size);
    let tv_momentum = f.choice(
        "optimizer.tv_momentum",
        Some("extrapolation"),
        |s| match s {
            "extrapolation" => Some(MomentumStyle::Extrapolation),
            "heavy_ball" => Some(MomentumStyle::HeavyBall),
            _ => None,
        },
        "extrapolation, heavy_ball",
    );
    let beta1 = f.get("optimizer.beta1", lamb_defaults.beta1);
    let beta2 = f.get("optimizer.beta2", lamb_defaults.beta2);
    let lamb_eps = f.get("optimizer.lamb_eps", lamb_defaults.eps);
    let max_trust = f.get("optimizer.max_trust_ratio", lamb_defaults.max_trust_ratio);
    let lr = f.get("optimizer.lr", 0.1f64);
    let lr_scaling = f.choice(
        "optimizer.lr_scaling",
        Some("sqrt"),
        |s| match s {
            "none" => Some(LrScaling::None),
            "linear" => Some(LrScaling::Linear),
            "sqrt" => Some(LrScaling::Sqrt),
            _ => None,
        },
        "none, linear, sqrt",
    );

    let default_schedule = match optimizer {
        Some(OptimizerKind::Tvlars) => "tvlars",
        Some(OptimizerKind::Sgd) => "constant",
        _ => "warmup_cosine",
    };
    let schedule_kind = f.choice(
        "schedule.kind",
        Some(default_schedule),
        |s| matches!(s, "tvlars" | "warmup_cosine" | "poly" | "constant").then(|| s.to_string()),
        "tvlars, warmup_cosine, poly, constant",
    );
    let schedule = match schedule_kind.as_deref() {
        Some("tvlars") => {
            let alpha = f.get("schedule.alpha", 1.0f64);
            let lambda = f.get("schedule.lambda", 1e-3f64);
            let delay = f.get("schedule.delay_epochs", 10.0f64);
            let gmin = f.get("schedule.gamma_min", 0.0f64);
            match (alpha, lambda, delay, gmin) {
                (Some(alpha), Some(lambda), Some(delay_epochs), Some(gamma_min)) => Some(ScheduleSpec::TimeVarying {
                    alpha,
                    lambda,
                    delay_epochs,
                    gamma_min,
                }),
                _ => None,
            }
        }
        Some("warmup_cosine") => {
            let w = f.get("schedule.warmup_epochs", 1.0f64);
            let gmin = f.get("schedule.gamma_min", 0.0f64);
            w.zip(gmin).map(|(warmup_epochs, gamma_min)| ScheduleSpec::WarmupCosine {
                warmup_epochs,
                gamma_min,
            })
        }
        Some("poly") => {
            let p = f.get("schedule.power", 2.0f64);
            let end = f.get("schedule.gamma_end", 1e-4f64);
            p.zip(end).map(|(power, gamma_end)| ScheduleSpec::Poly { power, gamma_end })
        }
        Some(_) => Some(ScheduleSpec::Constant),
        None => None,
    };

    let epochs = f.required::<u64>("train.epochs");
    let batch_size = f.get("train.batch_size", defaults.batch_size);
    let eval_every = f.get("train.eval_every", 1u64);
    let drop_last = f.get("train.drop_last", false);
    let shuffle = f.get("train.shuffle", true);
    let norm_every = f.get("train.norm_every", 1u64);
    let output_dir = f.get("run.output_dir", PathBuf::from("runs/default"));
    let wall_clock = f.get("run.wall_clock", false);

    let var_sizes = f.list("variance.batch_sizes", vec![8usize, 16, 32, 64, 128]);
    let var_trials = f.get("variance.trials", 200usize);
    let var_seed = f.get("variance.seed", seed_v);

    Some(RunConfig {
        dataset: dataset?,
        eval_fraction: eval_fraction?,
        hidden: hidden?,
        init: init?,
        init_seed: init_seed?,
        l2: l2?,
        optimizer: optimizer?,
        optim: OptimizerConfig {
            eta: eta?,
            weight_decay: weight_decay?,
            momentum: momentum?,
            eps: eps?,
            batch_size: batch_size?,
            base_batch_size: base_batch_size?,
            gamma_tuning: defaults.gamma_tuning,
            tv_momentum: tv_momentum?,
            lamb: LambParams {
                beta1: beta1?,
                beta2: beta2?,
                eps: lamb_eps?,
                max_trust_ratio: max_trust?,
            },
        },
        lr: lr?,
        lr_scaling: lr_scaling?,
        schedule: schedule?,
        epochs: epochs?,
        eval_every: eval_every?,
        drop_last: drop_last?,
        shuffle: shuffle?,
        seed: seed?,
        norm_every: norm_every?,
        output_dir: output_dir?,
        wall_clock: wall_clock?,
        variance: VarianceSpec {
            batch_sizes: var_sizes?,
            trials: var_trials?,
            seed: var_seed?,
        },
    })
}

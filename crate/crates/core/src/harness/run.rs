use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::data::{batch_iterator, Dataset};
use crate::diagnostics::{fit_loglog_slope, record_norms, variance_sweep, write_norms_jsonl, write_variance_csv, NormRecord, VarianceEstimate};
use crate::nn::{backward, evaluate, forward, init_model, InitScheme, LossKind, Model, NnError};
use crate::optim::{init_states, step_lamb, step_lars, step_sgd_momentum, step_tvlars, OptimError, OptimizerKind};
use crate::schedule::{phi, poly_decay, warmup_cosine, PolyConfig, TvConfig, WarmupConfig};

use super::metrics::{write_metrics_csv, MetricRow};
use super::{HarnessError, RunConfig};

/// Base-rate schedule resolved against a run's step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    TimeVarying(TvConfig),
    WarmupCosine(WarmupConfig),
    Poly(PolyConfig),
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSchedule {
    pub schedule: Schedule,
    pub steps_per_epoch: u64,
}

impl RunSchedule {
    pub fn new(cfg: &RunConfig, steps_per_epoch: u64) -> Result<Self, HarnessError> {
        let bad = |e: crate::schedule::ScheduleError| HarnessError::invalid(e.to_string());
        let schedule = if let Some(tv) = cfg.tv_config() {
            tv.validate().map_err(bad)?;
            Schedule::TimeVarying(tv)
        } else if let Some(w) = cfg.warmup_config(steps_per_epoch) {
            w.validate().map_err(bad)?;
            Schedule::WarmupCosine(w)
        } else if let Some(p) = cfg.poly_config(steps_per_epoch) {
            p.validate().map_err(bad)?;
            Schedule::Poly(p)
        } else {
            Schedule::Constant(cfg.gamma_target())
        };
        Ok(Self {
            schedule,
            steps_per_epoch,
        })
    }

    /// Epochs elapsed before step `step` (0-based) runs.
    pub fn epoch_at(&self, step: u64) -> f64 {
        step as f64 / self.steps_per_epoch as f64
    }

    /// Base rate applied by step `step` (0-based). Step-indexed schedules are
    /// evaluated at `step + 1`, so the first step already has a nonzero
    /// warm-up rate and the last lands on the horizon; the time-varying
    /// factor is evaluated at [`Self::epoch_at`].
    pub fn base_lr(&self, step: u64) -> f64 {
        match &self.schedule {
            Schedule::TimeVarying(tv) => tv.gamma_target * phi(tv, self.epoch_at(step)),
            Schedule::WarmupCosine(w) => warmup_cosine(w, (step + 1).min(w.horizon)).expect("clamped to horizon"),
            Schedule::Poly(p) => poly_decay(p, (step + 1).min(p.horizon)).expect("clamped to horizon"),
            Schedule::Constant(v) => *v,
        }
    }
}

pub fn steps_per_epoch(n: usize, batch_size: usize, drop_last: bool) -> u64 {
    (if drop_last { n / batch_size } else { n.div_ceil(batch_size) }) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceEvent {
    pub epoch: u64,
    pub step: u64,
    /// Parameter group whose update went non-finite, when known.
    pub group: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<MetricRow>,
    pub norms: Vec<NormRecord>,
    pub divergence: Option<DivergenceEvent>,
    pub model: Model,
    pub steps_per_epoch: u64,
}

/// Data split and freshly initialized model for a config.
pub struct Prepared {
    pub train: Dataset,
    pub eval: Dataset,
    pub model: Model,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, HarnessError> {
    let data = cfg.dataset.load()?;
    let (train, eval) = data.split(cfg.eval_fraction, cfg.seed)?;
    let mut dims = vec![data.dim()];
    dims.extend(&cfg.hidden);
    dims.push(data.class_count);
    let model = init_model(
        &dims,
        InitScheme {
            kind: cfg.init,
            seed: cfg.init_seed,
        },
        LossKind::SoftmaxCrossEntropy,
        cfg.l2,
    )?;
    Ok(Prepared { train, eval, model })
}

/// Trains in memory. Divergence ends the run early and is reported in
/// [`RunOutput::divergence`] together with the metrics gathered so far.
pub fn train(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    let Prepared { train, eval, mut model } = prepare(cfg)?;
    let b = cfg.optim.batch_size;
    if cfg.drop_last && b > train.len() {
        return Err(HarnessError::invalid(format!(
            "train.batch_size = {b} exceeds the {} training examples with drop_last",
            train.len()
        )));
    }
    let spe = steps_per_epoch(train.len(), b, cfg.drop_last);
    let mut out = RunOutput {
        metrics: Vec::new(),
        norms: Vec::new(),
        divergence: None,
        model: model.clone(),
        steps_per_epoch: spe,
    };
    if cfg.epochs == 0 {
        return Ok(out);
    }
    let sched = RunSchedule::new(cfg, spe)?;
    let eval_batch = eval.full_batch()?;
    let mut states = init_states(&model, cfg.optimizer, &cfg.optim);
    let started = Instant::now();
    let wall = |cfg: &RunConfig| if cfg.wall_clock { started.elapsed().as_millis() as u64 } else { 0 };
    let mut step = 0u64;
    let mut lr = sched.base_lr(0);

    'epochs: for epoch in 1..=cfg.epochs {
        let batches = batch_iterator(&train, b, cfg.seed.wrapping_add(epoch), cfg.shuffle, cfg.drop_last)?;
        assert_eq!(batches.num_batches() as u64, spe, "epoch accounting disagrees with the batch iterator");
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for batch in batches {
            lr = sched.base_lr(step);
            let t = sched.epoch_at(step);
            let fail = |group: Option<usize>, reason: String| DivergenceEvent {
                epoch,
                step,
                group,
                reason,
            };
            let (loss, cache) = match forward(&model, &batch) {
                Ok(x) => x,
                Err(e @ (NnError::NonFiniteLoss | NnError::NonFiniteActivation(_))) => {
                    out.divergence = Some(fail(None, e.to_string()));
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            };
            let grads = backward(&model, &cache, &batch)?;
            if step.is_multiple_of(cfg.norm_every) {
                out.norms.extend(record_norms(&model, &grads, step, t, loss)?);
            }
            let result = match cfg.optimizer {
                OptimizerKind::Sgd => step_sgd_momentum(&mut model, &grads, &cfg.optim, &mut states, lr),
                OptimizerKind::Lars => step_lars(&mut model, &grads, &cfg.optim, &mut states, lr),
                OptimizerKind::Lamb => step_lamb(&mut model, &grads, &cfg.optim, &mut states, lr),
                OptimizerKind::Tvlars => {
                    let Schedule::TimeVarying(tv) = &sched.schedule else {
                        unreachable!("validated: tvlars runs on the time-varying schedule")
                    };
                    step_tvlars(&mut model, &grads, &cfg.optim, &mut states, tv, t)
                }
            };
            match result {
                Ok(_) => {}
                Err(OptimError::Divergence { group }) => {
                    out.divergence = Some(fail(Some(group), format!("non-finite update in group {group}")));
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            }
            loss_sum += cache.data_loss * batch.size() as f64;
            seen += batch.size();
            step += 1;
        }
        let train_loss = loss_sum / seen as f64;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let (eval_loss, eval_accuracy) = match evaluate(&model, &eval_batch) {
                Ok(x) => x,
                Err(e @ (NnError::NonFiniteLoss | NnError::NonFiniteActivation(_))) => {
                    out.divergence = Some(DivergenceEvent {
                        epoch,
                        step,
                        group: None,
                        reason: format!("evaluation: {e}"),
                    });
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            out.metrics.push(MetricRow {
                epoch,
                step,
                train_loss,
                eval_loss,
                eval_accuracy,
                base_lr_value: lr,
                wall_ms: wall(cfg),
            });
        }
    }
    if let Some(ev) = &out.divergence {
        // Partial row for the epoch that failed.
        let last = out.metrics.last().map(|r| r.epoch);
        if last != Some(ev.epoch) {
            out.metrics.push(MetricRow {
                epoch: ev.epoch,
                step: ev.step,
                train_loss: f64::NAN,
                eval_loss: f64::NAN,
                eval_accuracy: f64::NAN,
                base_lr_value: lr,
                wall_ms: wall(cfg),
            });
        }
    }
    out.model = model;
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))
}

/// Paths of the files a run writes.
pub struct RunFiles {
    pub metrics: PathBuf,
    pub norms: PathBuf,
    pub divergence: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.csv"),
            norms: dir.join("norms.jsonl"),
            divergence: dir.join("divergence.json"),
        }
    }
}

/// Trains and writes `metrics.csv`, `norms.jsonl` and, on divergence,
/// `divergence.json` into `cfg.output_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    ensure_dir(&cfg.output_dir)?;
    let files = RunFiles::in_dir(&cfg.output_dir);
    let out = train(cfg)?;

    let mut w = create(&files.metrics)?;
    write_metrics_csv(&mut w, &out.metrics).map_err(|e| HarnessError::Io {
        path: files.metrics.clone(),
        source: e.into(),
    })?;
    w.flush().map_err(io_at(&files.metrics))?;

    let mut w = create(&files.norms)?;
    write_norms_jsonl(&mut w, &out.norms)?;
    w.flush().map_err(io_at(&files.norms))?;

    match &out.divergence {
        Some(ev) => {
            let json = serde_json::to_string_pretty(ev).expect("plain struct serializes");
            std::fs::write(&files.divergence, json + "\n").map_err(io_at(&files.divergence))?;
        }
        None if files.divergence.exists() => {
            std::fs::remove_file(&files.divergence).map_err(io_at(&files.divergence))?;
        }
        None => {}
    }
    Ok(out)
}

/// `(step, epoch, base rate)` for every step of the run.
pub fn schedule_table(cfg: &RunConfig) -> Result<Vec<(u64, f64, f64)>, HarnessError> {
    let n = prepare(cfg)?.train.len();
    let spe = steps_per_epoch(n, cfg.optim.batch_size, cfg.drop_last);
    if cfg.epochs == 0 || spe == 0 {
        return Ok(Vec::new());
    }
    let sched = RunSchedule::new(cfg, spe)?;
    Ok((0..cfg.epochs * spe)
        .map(|s| (s, sched.epoch_at(s), sched.base_lr(s)))
        .collect())
}

pub fn write_schedule_csv<W: Write>(mut out: W, table: &[(u64, f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "step,epoch,base_lr_value")?;
    for (s, e, v) in table {
        writeln!(out, "{s},{e},{v}")?;
    }
    out.flush()
}

/// Batch-gradient deviation at the initial parameters over the training
/// split, plus the log-log slope of the squared deviation when at least
/// three batch sizes fit. Writes `variance.csv` into the output directory.
pub fn run_variance(cfg: &RunConfig) -> Result<(Vec<VarianceEstimate>, Option<f64>), HarnessError> {
    let Prepared { train, model, .. } = prepare(cfg)?;
    if let Some(&b) = cfg.variance.batch_sizes.iter().find(|&&b| b > train.len()) {
        return Err(HarnessError::invalid(format!(
            "variance batch size {b} exceeds the {} training examples",
            train.len()
        )));
    }
    let est = variance_sweep(&model, &train, &cfg.variance.batch_sizes, cfg.variance.trials, cfg.variance.seed)?;
    let points: Vec<(f64, f64)> = est.iter().map(|e| (e.batch_size as f64, e.mean_sq_dev)).collect();
    let slope = fit_loglog_slope(&points).ok();
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("variance.csv");
    let mut w = create(&path)?;
    write_variance_csv(&mut w, &est)?;
    w.flush().map_err(io_at(&path))?;
    Ok((est, slope))
}

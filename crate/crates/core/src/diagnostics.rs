//! Training instrumentation.
//!
//! * Per-group norm records: weight norm (LWN), gradient norm (LGN) and their
//!   ratio (LNR), with a flag for the regime where the gradient norm has
//!   collapsed relative to the weights and the ratio explodes.
//! * Batch-gradient deviation from the full-data ("general") gradient as a
//!   function of batch size, and a log-log slope fit to test the `1/B` law.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::nn::{backward, forward, Gradients, Model, NnError};
use crate::tensor::l2_norm;

/// Guard added to the gradient norm in the ratio.
pub const LNR_EPS: f64 = 1e-12;
/// A record is flagged when `lgn < LNR_EXPLOSION_RATIO * lwn`.
pub const LNR_EXPLOSION_RATIO: f64 = 1e-6;
pub const MIN_VARIANCE_TRIALS: usize = 30;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("batch size {batch} exceeds dataset size {n}")]
    BatchTooLarge { batch: usize, n: usize },
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("need at least {MIN_VARIANCE_TRIALS} trials, got {0}")]
    TooFewTrials(usize),
    #[error("slope fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("slope fit needs positive coordinates, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error("slope fit needs at least two distinct batch sizes")]
    DegenerateAbscissa,
    #[error("{} gradient groups for a model with {} groups", .grads, .groups)]
    Misaligned { grads: usize, groups: usize },
    #[error("record (step {step}, group {group}) is out of order")]
    OutOfOrder { step: u64, group: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub step: u64,
    pub epoch: f64,
    pub group_index: usize,
    pub lwn: f64,
    pub lgn: f64,
    pub lnr: f64,
    pub loss: f64,
    pub lnr_exploding: bool,
}

/// One record per parameter group.
pub fn record_norms(
    model: &Model,
    grads: &Gradients,
    step: u64,
    epoch: f64,
    loss: f64,
) -> Result<Vec<NormRecord>, DiagnosticsError> {
    if grads.len() != model.num_groups() {
        return Err(DiagnosticsError::Misaligned {
            grads: grads.len(),
            groups: model.num_groups(),
        });
    }
    Ok(model
        .groups()
        .zip(grads.groups())
        .enumerate()
        .map(|(k, (w, g))| {
            let (lwn, lgn) = (w.norm(), g.norm());
            NormRecord {
                step,
                epoch,
                group_index: k,
                lwn,
                lgn,
                lnr: lwn / (lgn + LNR_EPS),
                loss,
                lnr_exploding: lwn > 0.0 && lgn < LNR_EXPLOSION_RATIO * lwn,
            }
        })
        .collect())
}

/// Append-only record store ordered by `(step, group_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormLog {
    records: Vec<NormRecord>,
}

impl NormLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[NormRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<NormRecord> {
        self.records
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = NormRecord>) -> Result<(), DiagnosticsError> {
        for r in records {
            if let Some(last) = self.records.last() {
                if (r.step, r.group_index) <= (last.step, last.group_index) {
                    return Err(DiagnosticsError::OutOfOrder {
                        step: r.step,
                        group: r.group_index,
                    });
                }
            }
            self.records.push(r);
        }
        Ok(())
    }

    pub fn exploding(&self) -> impl Iterator<Item = &NormRecord> {
        self.records.iter().filter(|r| r.lnr_exploding)
    }
}

pub fn write_norms_jsonl<W: Write>(mut out: W, records: &[NormRecord]) -> Result<(), DiagnosticsError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_norms_jsonl<R: BufRead>(input: R) -> Result<Vec<NormRecord>, DiagnosticsError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Mean gradient over the whole dataset at the current parameters.
pub fn general_gradient(model: &Model, dataset: &Dataset) -> Result<Gradients, DiagnosticsError> {
    let batch = dataset.full_batch()?;
    let (_, cache) = forward(model, &batch)?;
    Ok(backward(model, &cache, &batch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub batch_size: usize,
    pub trials: usize,
    pub seed: u64,
    /// Mean over trials of `||g_bar - g_B||`.
    pub mean_dev: f64,
    /// Mean over trials of `||g_bar - g_B||^2`.
    pub mean_sq_dev: f64,
}

/// Per-example gradients at fixed parameters, flattened across groups.
///
/// Batch gradients are formed by summing rows in ascending index order, the
/// same order used for the full-data mean, so a batch covering the whole
/// dataset reproduces it exactly.
#[derive(Debug, Clone)]
pub struct GradientSampler {
    n: usize,
    width: usize,
    rows: Vec<f64>,
    mean: Vec<f64>,
}

impl GradientSampler {
    pub fn new(model: &Model, dataset: &Dataset) -> Result<Self, DiagnosticsError> {
        let n = dataset.len();
        let width = model.num_params();
        let mut rows = Vec::with_capacity(n * width);
        for i in 0..n {
            let batch = dataset.batch(&[i])?;
            let (_, cache) = forward(model, &batch)?;
            rows.extend(backward(model, &cache, &batch)?.flatten());
        }
        let all: Vec<usize> = (0..n).collect();
        let mut sampler = Self {
            n,
            width,
            rows,
            mean: Vec::new(),
        };
        sampler.mean = sampler.batch_mean(&all);
        Ok(sampler)
    }

    pub fn general_gradient(&self) -> &[f64] {
        &self.mean
    }

    fn batch_mean(&self, sorted: &[usize]) -> Vec<f64> {
        let mut acc = vec![0.0; self.width];
        for &i in sorted {
            for (a, v) in acc.iter_mut().zip(&self.rows[i * self.width..(i + 1) * self.width]) {
                *a += v;
            }
        }
        let b = sorted.len() as f64;
        acc.iter_mut().for_each(|a| *a /= b);
        acc
    }

    /// Trial `j` samples without replacement from a ChaCha stream seeded
    /// with `seed + j`.
    pub fn estimate(&self, batch_size: usize, trials: usize, seed: u64) -> Result<VarianceEstimate, DiagnosticsError> {
        if batch_size == 0 {
            return Err(DiagnosticsError::ZeroBatch);
        }
        if batch_size > self.n {
            return Err(DiagnosticsError::BatchTooLarge {
                batch: batch_size,
                n: self.n,
            });
        }
        if trials < MIN_VARIANCE_TRIALS {
            return Err(DiagnosticsError::TooFewTrials(trials));
        }
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for j in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(j as u64));
            let mut idx = rand::seq::index::sample(&mut rng, self.n, batch_size).into_vec();
            idx.sort_unstable();
            let g_b = self.batch_mean(&idx);
            let diff: Vec<f64> = self.mean.iter().zip(&g_b).map(|(a, b)| a - b).collect();
            let dev = l2_norm(&diff);
            sum += dev;
            sum_sq += dev * dev;
        }
        Ok(VarianceEstimate {
            batch_size,
            trials,
            seed,
            mean_dev: sum / trials as f64,
            mean_sq_dev: sum_sq / trials as f64,
        })
    }
}

pub fn batch_gradient_variance(
    model: &Model,
    dataset: &Dataset,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<VarianceEstimate, DiagnosticsError> {
    if batch_size > dataset.len() {
        return Err(DiagnosticsError::BatchTooLarge {
            batch: batch_size,
            n: dataset.len(),
        });
    }
    GradientSampler::new(model, dataset)?.estimate(batch_size, trials, seed)
}

pub fn variance_sweep(
    model: &Model,
    dataset: &Dataset,
    batch_sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<VarianceEstimate>, DiagnosticsError> {
    let sampler = GradientSampler::new(model, dataset)?;
    batch_sizes.iter().map(|&b| sampler.estimate(b, trials, seed)).collect()
}

pub fn write_variance_csv<W: Write>(out: W, estimates: &[VarianceEstimate]) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(out);
    for e in estimates {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln(value)` against `ln(x)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64, DiagnosticsError> {
    if points.len() < 3 {
        return Err(DiagnosticsError::TooFewPoints(points.len()));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(DiagnosticsError::NonPositive(x, y));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(DiagnosticsError::DegenerateAbscissa);
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{init_model, Activation, DenseLayer, InitKind, InitScheme, LossKind};
    use crate::tensor::Tensor;

    fn scalar_model(w: f64) -> Model {
        let layer = DenseLayer::new(
            Tensor::new(vec![1, 1], vec![w]).unwrap(),
            Tensor::zeros(&[1]),
            Activation::Identity,
        )
        .unwrap();
        Model::new(vec![layer], LossKind::Mse, 0.0).unwrap()
    }

    fn grads(gw: f64, gb: f64) -> Gradients {
        Gradients(vec![Tensor::new(vec![1, 1], vec![gw]).unwrap(), Tensor::new(vec![1], vec![gb]).unwrap()])
    }

    fn small_model(seed: u64) -> Model {
        init_model(
            &[4, 6, 3],
            InitScheme {
                kind: InitKind::KaimingUniform,
                seed,
            },
            LossKind::SoftmaxCrossEntropy,
            1e-3,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_ratio() {
        let recs = record_norms(&scalar_model(0.0), &grads(0.0, 0.0), 0, 0.0, 1.0).unwrap();
        assert!(recs.iter().all(|r| r.lwn == 0.0 && r.lnr == 0.0 && !r.lnr_exploding));
    }

    #[test]
    fn gradient_scaling_scales_lgn_only() {
        let model = scalar_model(1.5);
        let a = record_norms(&model, &grads(0.2, 0.1), 3, 0.5, 1.0).unwrap();
        let b = record_norms(&model, &grads(0.2, 0.1).scale(10.0), 3, 0.5, 1.0).unwrap();
        assert_eq!(a[0].lwn, b[0].lwn);
        assert!((b[0].lgn - 10.0 * a[0].lgn).abs() < 1e-15);
    }

    #[test]
    fn worked_ratio() {
        let recs = record_norms(&scalar_model(1.0), &grads(0.5, 0.0), 0, 0.0, 0.0).unwrap();
        assert!((recs[0].lnr - 2.0).abs() < 1e-10);
        assert_eq!(recs[0].lnr, 1.0 / (0.5 + LNR_EPS));
        assert_eq!(recs.len(), 2);
    }

    #[test]
    fn explosion_flag_fires_on_zeroed_gradient() {
        let recs = record_norms(&scalar_model(2.0), &grads(0.0, 0.0), 0, 0.0, 0.0).unwrap();
        assert!(recs[0].lnr_exploding);
        assert!(!recs[1].lnr_exploding); // zero weight group
        let recs = record_norms(&scalar_model(2.0), &grads(1e-7, 0.0), 0, 0.0, 0.0).unwrap();
        assert!(recs[0].lnr_exploding);
        let recs = record_norms(&scalar_model(2.0), &grads(1e-3, 0.0), 0, 0.0, 0.0).unwrap();
        assert!(!recs[0].lnr_exploding);
    }

    #[test]
    fn log_is_append_only_and_ordered() {
        let model = scalar_model(1.0);
        let mut log = NormLog::new();
        log.extend(record_norms(&model, &grads(1.0, 1.0), 0, 0.0, 0.0).unwrap()).unwrap();
        log.extend(record_norms(&model, &grads(1.0, 1.0), 1, 0.1, 0.0).unwrap()).unwrap();
        assert_eq!(log.records().len(), 4);
        let stale = record_norms(&model, &grads(1.0, 1.0), 1, 0.1, 0.0).unwrap();
        assert!(matches!(log.extend(stale), Err(DiagnosticsError::OutOfOrder { step: 1, group: 0 })));
    }

    #[test]
    fn jsonl_round_trip() {
        let model = scalar_model(1.0);
        let recs = record_norms(&model, &grads(0.25, 0.0), 7, 1.25, 0.5).unwrap();
        let mut buf = Vec::new();
        write_norms_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(buf.iter().filter(|&&c| c == b'\n').count(), 2);
        assert_eq!(read_norms_jsonl(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn general_gradient_of_single_example() {
        let model = small_model(1);
        let ds = synth_blobs(1, 3, 4, 1.0, 0).unwrap().subset(&[1]).unwrap();
        let batch = ds.full_batch().unwrap();
        let (_, cache) = forward(&model, &batch).unwrap();
        assert_eq!(general_gradient(&model, &ds).unwrap(), backward(&model, &cache, &batch).unwrap());
    }

    #[test]
    fn general_gradient_unchanged_by_duplication() {
        let model = small_model(2);
        let ds = synth_blobs(4, 3, 4, 1.0, 5).unwrap();
        let doubled: Vec<usize> = (0..ds.len()).chain(0..ds.len()).collect();
        let a = general_gradient(&model, &ds).unwrap().flatten();
        let b = general_gradient(&model, &ds.subset(&doubled).unwrap()).unwrap().flatten();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn general_gradient_matches_per_example_summation() {
        let model = small_model(3);
        let ds = synth_blobs(5, 2, 4, 1.0, 11).unwrap();
        assert_eq!(ds.len(), 10);
        // oracle: mean of individual backward calls
        let mut acc = vec![0.0; model.num_params()];
        for i in 0..ds.len() {
            let b = ds.batch(&[i]).unwrap();
            let (_, c) = forward(&model, &b).unwrap();
            for (a, g) in acc.iter_mut().zip(backward(&model, &c, &b).unwrap().flatten()) {
                *a += g / ds.len() as f64;
            }
        }
        let got = general_gradient(&model, &ds).unwrap().flatten();
        for (x, y) in got.iter().zip(&acc) {
            assert!((x - y).abs() <= 1e-12);
        }
        let sampler = GradientSampler::new(&model, &ds).unwrap();
        for (x, y) in sampler.general_gradient().iter().zip(&acc) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn identical_examples_have_zero_deviation() {
        let model = small_model(4);
        let ds = synth_blobs(1, 3, 4, 1.0, 0).unwrap();
        let same = ds.subset(&[0; 40]).unwrap();
        for b in [1, 5, 40] {
            let est = batch_gradient_variance(&model, &same, b, 30, 9).unwrap();
            assert!(est.mean_dev < 1e-15, "{}", est.mean_dev);
        }
    }

    #[test]
    fn whole_dataset_batch_has_zero_deviation() {
        let model = small_model(5);
        let ds = synth_blobs(20, 3, 4, 1.0, 1).unwrap();
        let est = batch_gradient_variance(&model, &ds, ds.len(), 30, 0).unwrap();
        assert_eq!(est.mean_dev, 0.0);
    }

    #[test]
    fn variance_argument_errors() {
        let model = small_model(6);
        let ds = synth_blobs(5, 3, 4, 1.0, 1).unwrap();
        assert!(matches!(
            batch_gradient_variance(&model, &ds, 16, 30, 0),
            Err(DiagnosticsError::BatchTooLarge { batch: 16, n: 15 })
        ));
        assert!(matches!(
            batch_gradient_variance(&model, &ds, 4, 29, 0),
            Err(DiagnosticsError::TooFewTrials(29))
        ));
    }

    #[test]
    fn variance_is_deterministic_under_seed() {
        let model = small_model(7);
        let ds = synth_blobs(20, 3, 4, 1.0, 1).unwrap();
        let a = batch_gradient_variance(&model, &ds, 8, 30, 42).unwrap();
        let b = batch_gradient_variance(&model, &ds, 8, 30, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slope_examples() {
        let s = fit_loglog_slope(&[(1.0, 1.0), (10.0, 0.1), (100.0, 0.01)]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert_eq!(fit_loglog_slope(&[(1.0, 3.0), (2.0, 3.0), (8.0, 3.0)]).unwrap(), 0.0);
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(2.0, 1.0), (2.0, 3.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn variance_csv_has_header_and_rows() {
        let est = VarianceEstimate {
            batch_size: 8,
            trials: 200,
            seed: 1,
            mean_dev: 0.5,
            mean_sq_dev: 0.25,
        };
        let mut buf = Vec::new();
        write_variance_csv(&mut buf, &[est, est]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "batch_size,trials,seed,mean_dev,mean_sq_dev");
        assert_eq!(text.lines().count(), 3);
    }
}

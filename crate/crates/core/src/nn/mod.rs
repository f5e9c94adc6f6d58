//! A minimal dense feed-forward network with hand-written backpropagation.
//!
//! Every layer contributes two parameter groups, its weight matrix and its
//! bias vector, in the order `[W0, b0, W1, b1, ...]`. The optimizers treat
//! each group as one "layer" for the purpose of layer-wise rate scaling.

mod grad_check;
mod init;

use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use grad_check::{finite_diff_grad, max_relative_error, min_abs_preactivation};
pub use init::{init_model, InitKind, InitScheme};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("layer dimension list needs at least two entries, got {0}")]
    TooFewDims(usize),
    #[error("layer dimensions must be positive")]
    ZeroDim,
    #[error("layer {layer} expects fan_in {expected} but previous layer produces {actual}")]
    IncompatibleLayers {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("batch input width {actual} does not match model input width {expected}")]
    InputMismatch { expected: usize, actual: usize },
    #[error("target shape mismatch: {0}")]
    TargetMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(usize),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("cache was produced for a different model or batch")]
    StaleCache,
    #[error("finite-difference step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("l2 coefficient must be nonnegative and finite, got {0}")]
    BadL2(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[fan_out, fan_in]`
    pub weights: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self, NnError> {
        if weights.shape().len() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(NnError::TargetMismatch(format!(
                "dense layer needs weights [out, in] and bias [out], got {:?} and {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weights.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<DenseLayer>,
    pub loss_kind: LossKind,
    l2_coeff: f64,
}

impl Model {
    pub fn new(layers: Vec<DenseLayer>, loss_kind: LossKind, l2_coeff: f64) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::TooFewDims(0));
        }
        if !(l2_coeff >= 0.0 && l2_coeff.is_finite()) {
            return Err(NnError::BadL2(l2_coeff));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].fan_in() != pair[0].fan_out() {
                return Err(NnError::IncompatibleLayers {
                    layer: i + 1,
                    expected: pair[1].fan_in(),
                    actual: pair[0].fan_out(),
                });
            }
        }
        Ok(Self {
            layers,
            loss_kind,
            l2_coeff,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn l2_coeff(&self) -> f64 {
        self.l2_coeff
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_groups(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn group(&self, k: usize) -> &Tensor {
        let layer = &self.layers[k / 2];
        if k.is_multiple_of(2) {
            &layer.weights
        } else {
            &layer.bias
        }
    }

    pub fn group_mut(&mut self, k: usize) -> &mut Tensor {
        let layer = &mut self.layers[k / 2];
        if k.is_multiple_of(2) {
            &mut layer.weights
        } else {
            &mut layer.bias
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.groups().map(Tensor::len).sum()
    }

    fn fingerprint(&self, batch: &Batch) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for g in self.groups() {
            for v in g.data() {
                v.to_bits().hash(&mut h);
            }
        }
        for v in batch.inputs.data() {
            v.to_bits().hash(&mut h);
        }
        batch.size().hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Dense(Tensor),
}

/// A minibatch: `inputs` is `[B, d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self, NnError> {
        if inputs.shape().len() != 2 {
            return Err(NnError::TargetMismatch(format!(
                "inputs must be 2-D, got {:?}",
                inputs.shape()
            )));
        }
        let b = inputs.shape()[0];
        let n_targets = match &targets {
            Targets::Labels(l) => l.len(),
            Targets::Dense(t) => {
                if t.shape().len() != 2 {
                    return Err(NnError::TargetMismatch(format!(
                        "dense targets must be 2-D, got {:?}",
                        t.shape()
                    )));
                }
                t.shape()[0]
            }
        };
        if n_targets != b {
            return Err(NnError::TargetMismatch(format!(
                "{b} inputs but {n_targets} targets"
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn size(&self) -> usize {
        self.inputs.shape()[0]
    }
}

/// Per-parameter-group gradients, aligned with [`Model::groups`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self(model.groups().map(Tensor::zeros_like).collect())
    }

    pub fn groups(&self) -> &[Tensor] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All groups concatenated in group order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|t| t.scale(s)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to layer `i` at index `i`; the network output is last.
    activations: Vec<Vec<f64>>,
    preactivations: Vec<Vec<f64>>,
    pub loss: f64,
    /// Mean per-example loss without the L2 term.
    pub data_loss: f64,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.activations[self.activations.len() - 1]
    }

    pub fn preactivations(&self) -> &[Vec<f64>] {
        &self.preactivations
    }
}

fn check_batch(model: &Model, batch: &Batch) -> Result<(), NnError> {
    if batch.size() == 0 {
        return Err(NnError::EmptyBatch);
    }
    let d_in = batch.inputs.shape()[1];
    if d_in != model.input_dim() {
        return Err(NnError::InputMismatch {
            expected: model.input_dim(),
            actual: d_in,
        });
    }
    let classes = model.output_dim();
    match (&batch.targets, model.loss_kind) {
        (Targets::Labels(labels), _) => {
            if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
                return Err(NnError::LabelOutOfRange { label, classes });
            }
        }
        (Targets::Dense(t), LossKind::Mse) => {
            if t.shape()[1] != classes {
                return Err(NnError::TargetMismatch(format!(
                    "dense targets have width {} but model outputs {classes}",
                    t.shape()[1]
                )));
            }
        }
        (Targets::Dense(_), LossKind::SoftmaxCrossEntropy) => {
            return Err(NnError::TargetMismatch(
                "softmax cross-entropy needs integer labels".into(),
            ))
        }
    }
    Ok(())
}

/// Runs the network forward without computing a loss.
pub fn predict(model: &Model, inputs: &Tensor) -> Result<Tensor, NnError> {
    let b = inputs.shape()[0];
    let (acts, _) = propagate(model, inputs.data(), b)?;
    Ok(Tensor::new(vec![b, model.output_dim()], acts.into_iter().last().unwrap())?)
}

/// Activations per layer (input first) and pre-activations per layer.
type Trace = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn propagate(model: &Model, input: &[f64], b: usize) -> Result<Trace, NnError> {
    let mut activations = vec![input.to_vec()];
    let mut preactivations = Vec::with_capacity(model.layers.len());
    for (li, layer) in model.layers.iter().enumerate() {
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
        let x = &activations[li];
        let w = layer.weights.data();
        let bias = layer.bias.data();
        let mut z = vec![0.0; b * fan_out];
        for r in 0..b {
            let xr = &x[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let wr = &w[o * fan_in..(o + 1) * fan_in];
                let dot: f64 = xr.iter().zip(wr).map(|(a, c)| a * c).sum();
                z[r * fan_out + o] = dot + bias[o];
            }
        }
        let a: Vec<f64> = match layer.activation {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => z.clone(),
        };
        if !a.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFiniteActivation(li));
        }
        preactivations.push(z);
        activations.push(a);
    }
    Ok((activations, preactivations))
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn dense_target(batch: &Batch, r: usize, width: usize) -> Vec<f64> {
    match &batch.targets {
        Targets::Dense(t) => t.row(r).to_vec(),
        Targets::Labels(l) => {
            let mut v = vec![0.0; width];
            v[l[r]] = 1.0;
            v
        }
    }
}

/// Sum of squared parameters across every group.
pub fn squared_param_norm(model: &Model) -> f64 {
    model
        .groups()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum()
}

/// Mean per-example loss plus `(l2_coeff / 2) * sum_k ||w_k||^2`.
///
/// Cross-entropy uses integer labels; MSE averages the squared error over
/// every output element (labels are one-hot encoded).
pub fn forward(model: &Model, batch: &Batch) -> Result<(f64, ForwardCache), NnError> {
    check_batch(model, batch)?;
    let b = batch.size();
    let (activations, preactivations) = propagate(model, batch.inputs.data(), b)?;
    let out = &activations[activations.len() - 1];
    let width = model.output_dim();

    let data_loss = match model.loss_kind {
        LossKind::SoftmaxCrossEntropy => {
            let Targets::Labels(labels) = &batch.targets else {
                unreachable!("checked in check_batch")
            };
            let total: f64 = (0..b)
                .map(|r| -log_softmax_row(&out[r * width..(r + 1) * width])[labels[r]])
                .sum();
            total / b as f64
        }
        LossKind::Mse => {
            let mut total = 0.0;
            for r in 0..b {
                let y = dense_target(batch, r, width);
                total += out[r * width..(r + 1) * width]
                    .iter()
                    .zip(&y)
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>();
            }
            total / (b * width) as f64
        }
    };
    let loss = data_loss + 0.5 * model.l2_coeff * squared_param_norm(model);
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let cache = ForwardCache {
        activations,
        preactivations,
        loss,
        data_loss,
        fingerprint: model.fingerprint(batch),
    };
    Ok((loss, cache))
}

/// Gradient of the [`forward`] loss with respect to every parameter group.
pub fn backward(model: &Model, cache: &ForwardCache, batch: &Batch) -> Result<Gradients, NnError> {
    if cache.fingerprint != model.fingerprint(batch) || cache.activations.len() != model.layers.len() + 1 {
        return Err(NnError::StaleCache);
    }
    let b = batch.size();
    let width = model.output_dim();
    let out = cache.output();

    // dL/d(output)
    let mut delta = vec![0.0; b * width];
    match model.loss_kind {
        LossKind::SoftmaxCrossEntropy => {
            let Targets::Labels(labels) = &batch.targets else {
                return Err(NnError::TargetMismatch(
                    "softmax cross-entropy needs integer labels".into(),
                ));
            };
            for r in 0..b {
                let logp = log_softmax_row(&out[r * width..(r + 1) * width]);
                for (c, lp) in logp.iter().enumerate() {
                    let onehot = if c == labels[r] { 1.0 } else { 0.0 };
                    delta[r * width + c] = (lp.exp() - onehot) / b as f64;
                }
            }
        }
        LossKind::Mse => {
            let scale = 2.0 / (b * width) as f64;
            for r in 0..b {
                let y = dense_target(batch, r, width);
                for c in 0..width {
                    delta[r * width + c] = scale * (out[r * width + c] - y[c]);
                }
            }
        }
    }

    let mut grads: Vec<Tensor> = Vec::with_capacity(model.num_groups());
    for li in (0..model.layers.len()).rev() {
        let layer = &model.layers[li];
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
        if layer.activation == Activation::Relu {
            for (d, z) in delta.iter_mut().zip(&cache.preactivations[li]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let x = &cache.activations[li];
        let mut gw = vec![0.0; fan_out * fan_in];
        let mut gb = vec![0.0; fan_out];
        for r in 0..b {
            let xr = &x[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let d = delta[r * fan_out + o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xv) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xr) {
                    *g += d * xv;
                }
            }
        }
        if li > 0 {
            let w = layer.weights.data();
            let mut prev = vec![0.0; b * fan_in];
            for r in 0..b {
                let pr = &mut prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let d = delta[r * fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wv) in pr.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wv;
                    }
                }
            }
            delta = prev;
        }
        let mut gw = Tensor::new(vec![fan_out, fan_in], gw)?;
        let mut gb = Tensor::new(vec![fan_out], gb)?;
        if model.l2_coeff != 0.0 {
            gw.axpy(model.l2_coeff, &layer.weights)?;
            gb.axpy(model.l2_coeff, &layer.bias)?;
        }
        grads.push(gb);
        grads.push(gw);
    }
    grads.reverse();
    Ok(Gradients(grads))
}

/// Data loss and argmax accuracy over labelled examples.
pub fn evaluate(model: &Model, batch: &Batch) -> Result<(f64, f64), NnError> {
    let (_, cache) = forward(model, batch)?;
    let Targets::Labels(labels) = &batch.targets else {
        return Ok((cache.data_loss, 0.0));
    };
    let width = model.output_dim();
    let out = cache.output();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(r, &y)| argmax(&out[r * width..(r + 1) * width]) == y)
        .count();
    Ok((cache.data_loss, correct as f64 / labels.len() as f64))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Activation, DenseLayer, LossKind, Model, NnError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    XavierUniform,
    XavierNormal,
    KaimingUniform,
    KaimingNormal,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::XavierUniform => "xavier_uniform",
            InitKind::XavierNormal => "xavier_normal",
            InitKind::KaimingUniform => "kaiming_uniform",
            InitKind::KaimingNormal => "kaiming_normal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            InitKind::XavierUniform,
            InitKind::XavierNormal,
            InitKind::KaimingUniform,
            InitKind::KaimingNormal,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

enum Sampler {
    Uniform(f64),
    Normal(Normal<f64>),
}

fn sampler(kind: InitKind, fan_in: usize, fan_out: usize) -> Sampler {
    let (fi, fo) = (fan_in as f64, fan_out as f64);
    match kind {
        InitKind::XavierUniform => Sampler::Uniform((6.0 / (fi + fo)).sqrt()),
        InitKind::XavierNormal => Sampler::Normal(Normal::new(0.0, (2.0 / (fi + fo)).sqrt()).unwrap()),
        // gain sqrt(2): bound = gain * sqrt(3 / fan_in)
        InitKind::KaimingUniform => Sampler::Uniform((6.0 / fi).sqrt()),
        InitKind::KaimingNormal => Sampler::Normal(Normal::new(0.0, (2.0 / fi).sqrt()).unwrap()),
    }
}

/// Builds an MLP with ReLU hidden layers and an identity output layer.
///
/// Weights are drawn layer by layer from one ChaCha stream seeded with
/// `scheme.seed`; biases start at zero.
pub fn init_model(
    layer_dims: &[usize],
    scheme: InitScheme,
    loss_kind: LossKind,
    l2_coeff: f64,
) -> Result<Model, NnError> {
    if layer_dims.len() < 2 {
        return Err(NnError::TooFewDims(layer_dims.len()));
    }
    if layer_dims.contains(&0) {
        return Err(NnError::ZeroDim);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
    let n_layers = layer_dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for (i, pair) in layer_dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let s = sampler(scheme.kind, fan_in, fan_out);
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| match &s {
                Sampler::Uniform(bound) => rng.gen_range(-*bound..=*bound),
                Sampler::Normal(n) => n.sample(&mut rng),
            })
            .collect();
        let activation = if i + 1 == n_layers {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(DenseLayer::new(
            Tensor::new(vec![fan_out, fan_in], data)?,
            Tensor::zeros(&[fan_out]),
            activation,
        )?);
    }
    Model::new(layers, loss_kind, l2_coeff)
}

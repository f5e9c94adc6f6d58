//! Layer-wise optimizers.
//!
//! Each parameter group of a [`Model`] (one weight matrix or one bias
//! vector) is updated with its own rate and its own [`LayerOptState`]. A step
//! is all-or-nothing: if any group would produce a non-finite value the model
//! and states are left untouched and [`OptimError::Divergence`] names the
//! first offending group.

mod lamb;
mod lars;
mod sgd;
mod tvlars;

use thiserror::Error;

use crate::nn::{Gradients, Model};
use crate::tensor::Tensor;

pub use lamb::step_lamb;
pub use lars::{lars_group_update, layer_lr_lars, step_lars};
pub use sgd::step_sgd_momentum;
pub use tvlars::{step_tvlars, tvlars_group_update, tvlars_layer_lr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} parameter groups, got {actual}")]
    GroupCount { expected: usize, actual: usize },
    #[error("shape mismatch in group {group}: parameter {param:?}, other {other:?}")]
    ShapeMismatch {
        group: usize,
        param: Vec<usize>,
        other: Vec<usize>,
    },
    #[error("non-finite value in parameter group {group}")]
    Divergence { group: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Lars,
    Lamb,
    Tvlars,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Lars => "lars",
            OptimizerKind::Lamb => "lamb",
            OptimizerKind::Tvlars => "tvlars",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Sgd, Self::Lars, Self::Lamb, Self::Tvlars]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// How TVLARS carries momentum between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumStyle {
    /// `m' = w - gamma g`, `w' = m' + mu (m' - m)`.
    Extrapolation,
    /// `m' = mu m + gamma g`, `w' = w - m'`, as in LARS.
    HeavyBall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_trust_ratio: f64,
}

impl Default for LambParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            max_trust_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Trust coefficient multiplying the layer-wise norm ratio.
    pub eta: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Division guard in the layer-wise ratio.
    pub eps: f64,
    pub batch_size: usize,
    pub base_batch_size: usize,
    pub gamma_tuning: f64,
    pub tv_momentum: MomentumStyle,
    pub lamb: LambParams,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta: 0.001,
            weight_decay: 5e-4,
            momentum: 0.9,
            eps: 1e-9,
            batch_size: 512,
            base_batch_size: 512,
            gamma_tuning: 1.0,
            tv_momentum: MomentumStyle::Extrapolation,
            lamb: LambParams::default(),
        }
    }
}

impl OptimizerConfig {
    /// Linearly scaled base rate `gamma_tuning * B / B_base`.
    pub fn gamma_scale(&self) -> f64 {
        self.gamma_tuning * self.batch_size as f64 / self.base_batch_size as f64
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let mut problems = Vec::new();
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            problems.push("eta must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push("weight_decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push("momentum must lie in [0, 1)");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            problems.push("eps must be positive");
        }
        if self.batch_size == 0 || self.base_batch_size == 0 {
            problems.push("batch sizes must be positive");
        }
        if !(self.gamma_tuning > 0.0 && self.gamma_tuning.is_finite()) {
            problems.push("gamma_tuning must be positive");
        }
        let l = &self.lamb;
        if !((0.0..1.0).contains(&l.beta1) && (0.0..1.0).contains(&l.beta2)) {
            problems.push("lamb betas must lie in [0, 1)");
        }
        if !(l.eps > 0.0 && l.max_trust_ratio > 0.0) {
            problems.push("lamb eps and max_trust_ratio must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OptimError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Per-group optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOptState {
    /// Momentum buffer (LAMB: first moment).
    pub m: Tensor,
    /// LAMB second moment.
    pub v: Option<Tensor>,
    pub step: u64,
}

/// Fresh states for `model`.
///
/// TVLARS with extrapolation momentum starts from `m = w`; every other buffer
/// starts at zero.
pub fn init_states(model: &Model, kind: OptimizerKind, cfg: &OptimizerConfig) -> Vec<LayerOptState> {
    model
        .groups()
        .map(|w| LayerOptState {
            m: if kind == OptimizerKind::Tvlars && cfg.tv_momentum == MomentumStyle::Extrapolation {
                w.clone()
            } else {
                Tensor::zeros_like(w)
            },
            v: (kind == OptimizerKind::Lamb).then(|| Tensor::zeros_like(w)),
            step: 0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupReport {
    /// Effective rate applied to this group's gradient.
    pub layer_lr: f64,
    pub lwn: f64,
    pub lgn: f64,
    pub lnr: f64,
    pub update_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub groups: Vec<GroupReport>,
}

/// What a per-group rule hands back before the step is committed.
struct GroupOutcome {
    weights: Tensor,
    state: LayerOptState,
    layer_lr: f64,
}

fn check_inputs(model: &Model, grads: &Gradients, states: &[LayerOptState]) -> Result<(), OptimError> {
    let n = model.num_groups();
    for actual in [grads.len(), states.len()] {
        if actual != n {
            return Err(OptimError::GroupCount { expected: n, actual });
        }
    }
    for (k, w) in model.groups().enumerate() {
        for other in [&grads.0[k], &states[k].m] {
            if other.shape() != w.shape() {
                return Err(OptimError::ShapeMismatch {
                    group: k,
                    param: w.shape().to_vec(),
                    other: other.shape().to_vec(),
                });
            }
        }
        if !grads.0[k].is_finite() {
            return Err(OptimError::Divergence { group: k });
        }
    }
    Ok(())
}

/// Runs `rule` on every group, then commits only if all outcomes are finite.
fn apply_step<F>(
    model: &mut Model,
    grads: &Gradients,
    states: &mut [LayerOptState],
    eps: f64,
    mut rule: F,
) -> Result<StepReport, OptimError>
where
    F: FnMut(usize, &Tensor, &Tensor, &LayerOptState) -> GroupOutcome,
{
    check_inputs(model, grads, states)?;
    let mut outcomes = Vec::with_capacity(states.len());
    let mut report = StepReport::default();
    for (k, (w, g)) in model.groups().zip(grads.groups()).enumerate() {
        let out = rule(k, w, g, &states[k]);
        let finite = out.weights.is_finite()
            && out.state.m.is_finite()
            && out.state.v.as_ref().is_none_or(Tensor::is_finite)
            && out.layer_lr.is_finite();
        if !finite {
            return Err(OptimError::Divergence { group: k });
        }
        let (lwn, lgn) = (w.norm(), g.norm());
        let delta: Vec<f64> = out.weights.data().iter().zip(w.data()).map(|(a, b)| a - b).collect();
        report.groups.push(GroupReport {
            layer_lr: out.layer_lr,
            lwn,
            lgn,
            lnr: lwn / (lgn + eps),
            update_norm: crate::tensor::l2_norm(&delta),
        });
        outcomes.push(out);
    }
    for (k, out) in outcomes.into_iter().enumerate() {
        *model.group_mut(k) = out.weights;
        states[k] = out.state;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(OptimizerConfig::default().validate().is_ok());
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = OptimizerConfig {
            eta: 0.0,
            momentum: 1.0,
            ..Default::default()
        };
        let OptimError::InvalidConfig(msg) = cfg.validate().unwrap_err() else {
            panic!()
        };
        assert!(msg.contains("eta") && msg.contains("momentum"));
    }

    #[test]
    fn gamma_scale_is_linear_in_batch_ratio() {
        let cfg = OptimizerConfig {
            gamma_tuning: 0.5,
            batch_size: 2048,
            base_batch_size: 512,
            ..Default::default()
        };
        assert_eq!(cfg.gamma_scale(), 2.0);
    }

    #[test]
    fn kind_round_trips_through_name() {
        for k in [OptimizerKind::Sgd, OptimizerKind::Lars, OptimizerKind::Lamb, OptimizerKind::Tvlars] {
            assert_eq!(OptimizerKind::parse(k.name()), Some(k));
        }
        assert_eq!(OptimizerKind::parse("adam"), None);
    }
}

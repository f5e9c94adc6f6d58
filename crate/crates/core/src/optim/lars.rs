use super::{apply_step, GroupOutcome, LayerOptState, OptimError, OptimizerConfig, StepReport};
use crate::nn::{Gradients, Model};
use crate::tensor::Tensor;

/// `base_lr * eta * ||w|| / (||g|| + weight_decay * ||w|| + eps)`, or 0 for
/// an all-zero group.
pub fn layer_lr_lars(cfg: &OptimizerConfig, base_lr: f64, w: &Tensor, g: &Tensor) -> Result<f64, OptimError> {
    if w.shape() != g.shape() {
        return Err(OptimError::ShapeMismatch {
            group: 0,
            param: w.shape().to_vec(),
            other: g.shape().to_vec(),
        });
    }
    Ok(trust_rate(cfg, base_lr, w.norm(), g.norm()))
}

pub(super) fn trust_rate(cfg: &OptimizerConfig, base_lr: f64, w_norm: f64, g_norm: f64) -> f64 {
    if w_norm == 0.0 {
        return 0.0;
    }
    base_lr * cfg.eta * w_norm / (g_norm + cfg.weight_decay * w_norm + cfg.eps)
}

/// Heavy-ball update for one group: `m' = mu m + gamma g`, `w' = w - m'`.
/// Returns `(m', w')`.
pub fn lars_group_update(w: &Tensor, g: &Tensor, m: &Tensor, gamma: f64, mu: f64) -> (Tensor, Tensor) {
    let mut m_next = m.scale(mu);
    m_next.axpy(gamma, g).expect("shapes checked by caller");
    let mut w_next = w.clone();
    w_next.axpy(-1.0, &m_next).expect("shapes checked by caller");
    (m_next, w_next)
}

pub fn step_lars(
    model: &mut Model,
    grads: &Gradients,
    cfg: &OptimizerConfig,
    states: &mut [LayerOptState],
    base_lr: f64,
) -> Result<StepReport, OptimError> {
    apply_step(model, grads, states, cfg.eps, |_, w, g, state| {
        let gamma = trust_rate(cfg, base_lr, w.norm(), g.norm());
        let (m, weights) = lars_group_update(w, g, &state.m, gamma, cfg.momentum);
        GroupOutcome {
            weights,
            state: LayerOptState {
                m,
                v: None,
                step: state.step + 1,
            },
            layer_lr: gamma,
        }
    })
}

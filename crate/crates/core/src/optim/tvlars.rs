//! Time-varying LARS.
//!
//! Per step and per group:
//!
//! ```text
//! phi     = schedule::phi(tv, t)
//! gamma_k = gamma_target * phi * eta * ||w_k|| / (||g_k|| + w_d ||w_k|| + eps)
//! m_k'    = w_k - gamma_k g_k
//! w_k'    = m_k' + mu (m_k' - m_k)
//! ```
//!
//! `t` is measured in epochs. With [`MomentumStyle::HeavyBall`] the last two
//! lines are replaced by the LARS heavy-ball update.

use super::lars::{lars_group_update, trust_rate};
use super::{apply_step, GroupOutcome, LayerOptState, MomentumStyle, OptimError, OptimizerConfig, StepReport};
use crate::nn::{Gradients, Model};
use crate::schedule::{phi, TvConfig};
use crate::tensor::Tensor;

/// Layer-wise rate at epoch `t`.
pub fn tvlars_layer_lr(cfg: &OptimizerConfig, tv: &TvConfig, t: f64, w: &Tensor, g: &Tensor) -> f64 {
    trust_rate(cfg, tv.gamma_target * phi(tv, t), w.norm(), g.norm())
}

/// Extrapolation update for one group. Returns `(m', w')`.
pub fn tvlars_group_update(w: &Tensor, g: &Tensor, m_prev: &Tensor, gamma: f64, mu: f64) -> (Tensor, Tensor) {
    let mut m_next = w.clone();
    m_next.axpy(-gamma, g).expect("shapes checked by caller");
    let w_next = Tensor::new(
        m_next.shape().to_vec(),
        m_next
            .data()
            .iter()
            .zip(m_prev.data())
            .map(|(mn, mp)| mn + mu * (mn - mp))
            .collect(),
    )
    .expect("same shape as m_next");
    (m_next, w_next)
}

pub fn step_tvlars(
    model: &mut Model,
    grads: &Gradients,
    cfg: &OptimizerConfig,
    states: &mut [LayerOptState],
    tv: &TvConfig,
    t: f64,
) -> Result<StepReport, OptimError> {
    tv.validate()
        .map_err(|e| OptimError::InvalidConfig(e.to_string()))?;
    let base = tv.gamma_target * phi(tv, t);
    apply_step(model, grads, states, cfg.eps, |_, w, g, state| {
        let gamma = trust_rate(cfg, base, w.norm(), g.norm());
        let (m, weights) = match cfg.tv_momentum {
            MomentumStyle::Extrapolation => tvlars_group_update(w, g, &state.m, gamma, cfg.momentum),
            MomentumStyle::HeavyBall => lars_group_update(w, g, &state.m, gamma, cfg.momentum),
        };
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

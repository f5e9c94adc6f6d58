use super::{apply_step, GroupOutcome, LayerOptState, OptimError, OptimizerConfig, StepReport};
use crate::nn::{Gradients, Model};
use crate::tensor::{l2_norm, Tensor};

/// LAMB: bias-corrected Adam direction plus decoupled weight decay, scaled
/// per group by the trust ratio `||w|| / ||update||` clipped to
/// `[0, max_trust_ratio]`. The ratio is 1 when either norm is zero.
pub fn step_lamb(
    model: &mut Model,
    grads: &Gradients,
    cfg: &OptimizerConfig,
    states: &mut [LayerOptState],
    base_lr: f64,
) -> Result<StepReport, OptimError> {
    let p = cfg.lamb;
    apply_step(model, grads, states, cfg.eps, |_, w, g, state| {
        let step = state.step + 1;
        let v_prev = state.v.clone().unwrap_or_else(|| Tensor::zeros_like(w));
        let m: Vec<f64> = state
            .m
            .data()
            .iter()
            .zip(g.data())
            .map(|(m, g)| p.beta1 * m + (1.0 - p.beta1) * g)
            .collect();
        let v: Vec<f64> = v_prev
            .data()
            .iter()
            .zip(g.data())
            .map(|(v, g)| p.beta2 * v + (1.0 - p.beta2) * g * g)
            .collect();
        let bc1 = 1.0 - p.beta1.powf(step as f64);
        let bc2 = 1.0 - p.beta2.powf(step as f64);
        let update: Vec<f64> = m
            .iter()
            .zip(&v)
            .zip(w.data())
            .map(|((m, v), w)| (m / bc1) / ((v / bc2).sqrt() + p.eps) + cfg.weight_decay * w)
            .collect();
        let (w_norm, u_norm) = (w.norm(), l2_norm(&update));
        let trust = if w_norm == 0.0 || u_norm == 0.0 {
            1.0
        } else {
            (w_norm / u_norm).clamp(0.0, p.max_trust_ratio)
        };
        let layer_lr = base_lr * trust;
        let weights: Vec<f64> = w.data().iter().zip(&update).map(|(w, u)| w - layer_lr * u).collect();
        let shape = w.shape().to_vec();
        GroupOutcome {
            weights: Tensor::new(shape.clone(), weights).expect("same shape"),
            state: LayerOptState {
                m: Tensor::new(shape.clone(), m).expect("same shape"),
                v: Some(Tensor::new(shape, v).expect("same shape")),
                step,
            },
            layer_lr,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, LossKind};
    use crate::optim::{init_states, OptimizerKind};

    fn model_with(w: &[f64]) -> Model {
        let layer = DenseLayer::new(
            Tensor::new(vec![1, w.len()], w.to_vec()).unwrap(),
            Tensor::zeros(&[1]),
            Activation::Identity,
        )
        .unwrap();
        Model::new(vec![layer], LossKind::Mse, 0.0).unwrap()
    }

    fn cfg(wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            weight_decay: wd,
            ..Default::default()
        }
    }

    #[test]
    fn zero_gradient_fresh_state_is_unchanged() {
        let c = cfg(0.0);
        let mut model = model_with(&[0.3, -0.7]);
        let before = model.clone();
        let mut states = init_states(&model, OptimizerKind::Lamb, &c);
        let grads = crate::nn::Gradients::zeros_like(&model);
        step_lamb(&mut model, &grads, &c, &mut states, 0.1).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn zero_weight_norm_uses_unit_trust() {
        let c = cfg(0.0);
        let mut model = model_with(&[0.5]);
        let mut states = init_states(&model, OptimizerKind::Lamb, &c);
        let grads = Gradients(vec![Tensor::new(vec![1, 1], vec![0.2]).unwrap(), Tensor::new(vec![1], vec![0.4]).unwrap()]);
        let report = step_lamb(&mut model, &grads, &c, &mut states, 0.01).unwrap();
        // bias group has ||w|| = 0
        assert_eq!(report.groups[1].layer_lr, 0.01);
        assert!(model.group(1).data()[0] < 0.0);
    }

    #[test]
    fn trust_ratio_is_clipped() {
        let c = cfg(0.0);
        let mut model = model_with(&[1000.0]);
        let mut states = init_states(&model, OptimizerKind::Lamb, &c);
        let grads = Gradients(vec![Tensor::new(vec![1, 1], vec![1.0]).unwrap(), Tensor::zeros(&[1])]);
        let report = step_lamb(&mut model, &grads, &c, &mut states, 0.01).unwrap();
        assert!((report.groups[0].layer_lr - 0.1).abs() < 1e-15);
    }

    #[test]
    fn one_step_matches_scalar_reimplementation() {
        let c = cfg(0.01);
        let (w0, g0, lr) = (0.8f64, -0.3f64, 0.05f64);
        let mut model = model_with(&[w0]);
        let mut states = init_states(&model, OptimizerKind::Lamb, &c);
        let grads = Gradients(vec![Tensor::new(vec![1, 1], vec![g0]).unwrap(), Tensor::zeros(&[1])]);
        step_lamb(&mut model, &grads, &c, &mut states, lr).unwrap();

        // scalar oracle
        let m = 0.1 * g0;
        let v = 0.001 * g0 * g0;
        let mhat = m / (1.0 - 0.9);
        let vhat = v / (1.0 - 0.999);
        let u = mhat / (vhat.sqrt() + 1e-6) + 0.01 * w0;
        let trust = (w0.abs() / u.abs()).min(10.0);
        let expected = w0 - lr * trust * u;
        assert!((model.group(0).data()[0] - expected).abs() < 1e-15);
        assert_eq!(states[0].step, 1);
    }
}

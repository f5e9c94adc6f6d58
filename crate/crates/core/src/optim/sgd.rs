use super::{apply_step, GroupOutcome, LayerOptState, OptimError, OptimizerConfig, StepReport};
use crate::nn::{Gradients, Model};

/// Heavy-ball SGD: `m' = mu m + g`, `w' = w - base_lr m'`.
pub fn step_sgd_momentum(
    model: &mut Model,
    grads: &Gradients,
    cfg: &OptimizerConfig,
    states: &mut [LayerOptState],
    base_lr: f64,
) -> Result<StepReport, OptimError> {
    apply_step(model, grads, states, cfg.eps, |_, w, g, state| {
        let mut m = state.m.scale(cfg.momentum);
        m.axpy(1.0, g).expect("shapes checked");
        let mut weights = w.clone();
        weights.axpy(-base_lr, &m).expect("shapes checked");
        GroupOutcome {
            weights,
            state: LayerOptState {
                m,
                v: None,
                step: state.step + 1,
            },
            layer_lr: base_lr,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, LossKind};
    use crate::optim::{init_states, OptimizerKind};
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

    fn grad_of_half_square(model: &Model) -> Gradients {
        // f(w) = w^2 / 2 on the weight group only
        Gradients(vec![model.group(0).clone(), Tensor::zeros(&[1])])
    }

    #[test]
    fn no_momentum_is_plain_gradient_step() {
        let cfg = OptimizerConfig {
            momentum: 0.0,
            ..Default::default()
        };
        let mut model = scalar_model(2.0);
        let mut states = init_states(&model, OptimizerKind::Sgd, &cfg);
        let g = grad_of_half_square(&model);
        step_sgd_momentum(&mut model, &g, &cfg, &mut states, 0.25).unwrap();
        assert_eq!(model.group(0).data()[0], 1.5);
    }

    #[test]
    fn zero_rate_leaves_model_unchanged() {
        let cfg = OptimizerConfig::default();
        let mut model = scalar_model(2.0);
        let before = model.clone();
        let mut states = init_states(&model, OptimizerKind::Sgd, &cfg);
        let g = grad_of_half_square(&model);
        step_sgd_momentum(&mut model, &g, &cfg, &mut states, 0.0).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn two_momentum_steps_on_half_square() {
        let cfg = OptimizerConfig {
            momentum: 0.9,
            ..Default::default()
        };
        let mut model = scalar_model(1.0);
        let mut states = init_states(&model, OptimizerKind::Sgd, &cfg);
        for _ in 0..2 {
            let g = grad_of_half_square(&model);
            step_sgd_momentum(&mut model, &g, &cfg, &mut states, 0.1).unwrap();
        }
        // hand iteration: w1 = 1 - 0.1*1 = 0.9; m2 = 0.9*1 + 0.9 = 1.8; w2 = 0.9 - 0.18
        let (mut w, mut m) = (1.0f64, 0.0f64);
        for _ in 0..2 {
            m = 0.9 * m + w;
            w -= 0.1 * m;
        }
        assert_eq!(w, model.group(0).data()[0]);
        assert!((w - 0.72).abs() < 1e-15);
    }
}

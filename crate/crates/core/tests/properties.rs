use proptest::prelude::*;

use tvlars::data::{parse_cifar10_bin, CIFAR10_RECORD_LEN};
use tvlars::diagnostics::record_norms;
use tvlars::harness::{parse_metrics_csv, scaled_lr, RunConfig};
use tvlars::nn::{Gradients, InitKind, InitScheme, LossKind, Model};
use tvlars::optim::{
    init_states, layer_lr_lars, step_lamb, step_lars, step_sgd_momentum, step_tvlars, OptimizerConfig, OptimizerKind,
};
use tvlars::schedule::TvConfig;
use tvlars::tensor::Tensor;

fn model(seed: u64) -> Model {
    let mut m = tvlars::nn::init_model(
        &[3, 5, 2],
        InitScheme {
            kind: InitKind::XavierUniform,
            seed,
        },
        LossKind::SoftmaxCrossEntropy,
        0.0,
    )
    .unwrap();
    for k in [1, 3] {
        for (i, b) in m.group_mut(k).data_mut().iter_mut().enumerate() {
            *b = 0.05 * (i as f64 + 1.0);
        }
    }
    m
}

fn grads_for(m: &Model, vals: &[f64]) -> Gradients {
    let mut i = 0;
    Gradients(
        m.groups()
            .map(|w| {
                let data = (0..w.len())
                    .map(|_| {
                        i += 1;
                        vals[i % vals.len()]
                    })
                    .collect();
                Tensor::new(w.shape().to_vec(), data).unwrap()
            })
            .collect(),
    )
}

fn no_momentum() -> OptimizerConfig {
    OptimizerConfig {
        momentum: 0.0,
        weight_decay: 0.0,
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn lars_update_norm_is_rate_times_gradient_norm(
        seed in 0u64..1000,
        vals in prop::collection::vec(-2.0f64..2.0, 1..20),
        base_lr in 0.0f64..5.0,
    ) {
        let before = model(seed);
        let g = grads_for(&before, &vals);
        let cfg = no_momentum();
        let mut m = before.clone();
        let mut st = init_states(&m, OptimizerKind::Lars, &cfg);
        let report = step_lars(&mut m, &g, &cfg, &mut st, base_lr).unwrap();
        for (k, r) in report.groups.iter().enumerate() {
            let expected = r.layer_lr * g.0[k].norm();
            prop_assert!((r.update_norm - expected).abs() <= 1e-12 * (1.0 + expected));
            prop_assert!(r.lwn >= 0.0 && r.lgn >= 0.0 && r.lnr.is_finite());
        }
    }

    #[test]
    fn layer_rate_is_scale_free_in_the_gradient(
        w in prop::collection::vec(-3.0f64..3.0, 1..10),
        g in prop::collection::vec(-3.0f64..3.0, 1..10),
        s in 1e-3f64..1e3,
    ) {
        let n = w.len().min(g.len());
        let w = Tensor::new(vec![n], w[..n].to_vec()).unwrap();
        let g = Tensor::new(vec![n], g[..n].to_vec()).unwrap();
        prop_assume!(g.norm() > 1e-6);
        let cfg = OptimizerConfig { weight_decay: 0.0, eps: 1e-300, ..Default::default() };
        let a = layer_lr_lars(&cfg, 1.0, &w, &g).unwrap();
        let b = layer_lr_lars(&cfg, 1.0, &w, &g.scale(s)).unwrap();
        // gamma scales as 1/s, so gamma * g is unchanged
        prop_assert!((a - b * s).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn optimizers_are_pure_functions_of_their_inputs(
        seed in 0u64..1000,
        vals in prop::collection::vec(-1.0f64..1.0, 1..10),
        kind in prop::sample::select(vec![OptimizerKind::Sgd, OptimizerKind::Lars, OptimizerKind::Lamb, OptimizerKind::Tvlars]),
    ) {
        let start = model(seed);
        let g = grads_for(&start, &vals);
        let cfg = OptimizerConfig::default();
        let tv = TvConfig { alpha: 1.0, lambda: 0.1, delay_epochs: 2.0, gamma_min: 0.0, gamma_target: 1.0 };
        let run = || {
            let mut m = start.clone();
            let mut st = init_states(&m, kind, &cfg);
            for step in 0..3 {
                match kind {
                    OptimizerKind::Sgd => step_sgd_momentum(&mut m, &g, &cfg, &mut st, 0.1),
                    OptimizerKind::Lars => step_lars(&mut m, &g, &cfg, &mut st, 0.1),
                    OptimizerKind::Lamb => step_lamb(&mut m, &g, &cfg, &mut st, 0.1),
                    OptimizerKind::Tvlars => step_tvlars(&mut m, &g, &cfg, &mut st, &tv, step as f64 * 0.5),
                }
                .unwrap();
            }
            (m, st)
        };
        let (m1, s1) = run();
        let (m2, s2) = run();
        prop_assert_eq!(m1, m2);
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn lamb_step_is_bounded_by_clipped_trust(
        seed in 0u64..1000,
        vals in prop::collection::vec(-1.0f64..1.0, 1..10),
        base_lr in 0.0f64..1.0,
    ) {
        let before = model(seed);
        let g = grads_for(&before, &vals);
        let cfg = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let mut m = before.clone();
        let mut st = init_states(&m, OptimizerKind::Lamb, &cfg);
        let report = step_lamb(&mut m, &g, &cfg, &mut st, base_lr).unwrap();
        for (k, r) in report.groups.iter().enumerate() {
            // First step: |m_hat / (sqrt(v_hat) + eps)| <= 1 per coordinate.
            let bound = base_lr * cfg.lamb.max_trust_ratio * (before.group(k).len() as f64).sqrt();
            prop_assert!(r.update_norm <= bound + 1e-12);
        }
    }

    #[test]
    fn norm_records_are_never_nan(
        seed in 0u64..1000,
        vals in prop::collection::vec(-1.0f64..1.0, 1..10),
        zero in any::<bool>(),
    ) {
        let m = model(seed);
        let g = if zero { Gradients::zeros_like(&m) } else { grads_for(&m, &vals) };
        let recs = record_norms(&m, &g, 0, 0.0, 1.0).unwrap();
        prop_assert_eq!(recs.len(), m.num_groups());
        for r in recs {
            prop_assert!(r.lwn >= 0.0 && r.lgn >= 0.0 && !r.lnr.is_nan());
        }
    }

    #[test]
    fn scaled_lr_is_square_root_in_batch(base in 1e-4f64..10.0, b0 in 1usize..1024, k in 1usize..64) {
        let v = scaled_lr(base, b0 * k * k, b0);
        prop_assert!((v - base * k as f64).abs() <= 1e-12 * v);
    }

    #[test]
    fn cifar_parser_accepts_exactly_whole_records(bytes in prop::collection::vec(0u8..10, 0..8000)) {
        match parse_cifar10_bin(&bytes) {
            Ok(recs) => {
                prop_assert_eq!(bytes.len() % CIFAR10_RECORD_LEN, 0);
                prop_assert_eq!(recs.len(), bytes.len() / CIFAR10_RECORD_LEN);
            }
            Err(_) => prop_assert_ne!(bytes.len() % CIFAR10_RECORD_LEN, 0),
        }
    }

    #[test]
    fn config_parser_never_panics(text in "[a-z_.=#\" 0-9,\n-]{0,200}") {
        let _ = RunConfig::parse(&text);
    }

    #[test]
    fn metrics_parser_never_panics(text in "[a-z_,.0-9\n-]{0,200}") {
        let _ = parse_metrics_csv(text.as_bytes());
    }
}

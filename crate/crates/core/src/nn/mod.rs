//! Dense MLP engine with exact per-sample gradients.

mod checkpoint;
mod loss;
mod mlp;
mod tensor;

pub use checkpoint::{
    from_json as network_from_json, load as load_network, save as save_network,
    to_json as network_to_json, NETWORK_FORMAT,
};
pub use loss::{
    backward_per_sample, grad_check, logistic_loss, sample_loss, sample_loss_grad, sigmoid,
    softplus, LossKind, PerSampleGrads, Target, Targets,
};
pub use mlp::{param_distance, Activation, MlpSpec, Network, Trace};
pub use tensor::{Provenance, Tensor};

/// Squared Euclidean norm.
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::rng_from_seed;

    fn random_input(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = MlpSpec::uniform(vec![3, 4, 2], Activation::Tanh).unwrap();
        let net = Network::zeros(spec);
        assert_eq!(
            net.forward_sample(&[1.0, -2.0, 3.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn affine_forward() {
        let spec = MlpSpec::uniform(vec![1, 1], Activation::Relu).unwrap();
        let net = Network::from_params(spec, 0, vec![2.0, 0.5]).unwrap();
        assert_eq!(net.forward_sample(&[3.0]).unwrap(), vec![6.5]);
    }

    #[test]
    fn relu_forward_matches_scalar_trace() {
        // 2 -> 2 (relu) -> 1 with weights symmetric under input negation.
        let spec = MlpSpec::uniform(vec![2, 2, 1], Activation::Relu).unwrap();
        let params = vec![1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.5, 0.5, 0.1];
        let net = Network::from_params(spec, 0, params).unwrap();
        let scalar = |x0: f64, x1: f64| {
            let h0 = (x0 - x1).max(0.0);
            let h1 = (-x0 + x1).max(0.0);
            0.5 * h0 + 0.5 * h1 + 0.1
        };
        for &(a, b) in &[(0.3, -1.2), (-0.3, 1.2), (2.0, 2.0), (-4.0, 1.0)] {
            let out = net.forward_sample(&[a, b]).unwrap()[0];
            assert_eq!(out, scalar(a, b));
            let neg = net.forward_sample(&[-a, -b]).unwrap()[0];
            assert_eq!(neg, scalar(-a, -b));
            assert!((out - neg).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_width() {
        let net = Network::init(MlpSpec::uniform(vec![3, 2], Activation::Relu).unwrap(), 1);
        let batch = Tensor::matrix(2, 4, vec![0.0; 8]).unwrap();
        assert!(matches!(
            net.forward(&batch),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn forward_flags_non_finite_output() {
        let spec = MlpSpec::uniform(vec![1, 1], Activation::Relu).unwrap();
        let net = Network::from_params(spec, 0, vec![f64::MAX, 0.0]).unwrap();
        assert!(matches!(
            net.forward_sample(&[10.0]),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn logistic_at_zero_logit() {
        let (l, d) = logistic_loss(0.0, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(d, -0.5);
    }

    #[test]
    fn squared_error_at_minimum() {
        let (l, g) = LossKind::WeightedSquaredError
            .evaluate(
                &[0.3, -0.2],
                Target::Weighted {
                    target: &[0.3, -0.2],
                    weight: 3.0,
                },
            )
            .unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        assert!("hinge".parse::<LossKind>().is_err());
        assert!(LossKind::LogisticWithLogits
            .evaluate(
                &[0.0],
                Target::Weighted {
                    target: &[0.0],
                    weight: 1.0
                }
            )
            .is_err());
    }

    /// Independent central-difference gradient of a per-sample loss.
    fn fd_grad(net: &Network, x: &[f64], kind: LossKind, target: Target<'_>, h: f64) -> Vec<f64> {
        let mut probe = net.clone();
        (0..net.num_params())
            .map(|k| {
                let orig = probe.params()[k];
                probe.params_mut()[k] = orig + h;
                let up = sample_loss(&probe, x, kind, target).unwrap();
                probe.params_mut()[k] = orig - h;
                let down = sample_loss(&probe, x, kind, target).unwrap();
                probe.params_mut()[k] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn per_sample_grads_match_finite_differences() {
        let spec = MlpSpec::uniform(vec![4, 6, 1], Activation::Tanh).unwrap();
        let net = Network::init(spec, 11);
        let batch = Tensor::matrix(5, 4, random_input(3, 20)).unwrap();
        let labels = [1.0, -1.0, 1.0, 1.0, -1.0];
        let (_, grads) = backward_per_sample(
            &net,
            &batch,
            LossKind::LogisticWithLogits,
            Targets::Labels(&labels),
        )
        .unwrap();
        for (i, g) in grads.iter().enumerate() {
            let fd = fd_grad(
                &net,
                batch.row(i),
                LossKind::LogisticWithLogits,
                Target::Label(labels[i]),
                1e-5,
            );
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() / a.abs().max(1.0) < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn grad_check_linear_quadratic_is_exact() {
        let spec = MlpSpec::uniform(vec![3, 2], Activation::Relu).unwrap();
        let net = Network::init(spec, 5);
        let x = random_input(9, 3);
        let err = grad_check(
            &net,
            &x,
            LossKind::WeightedSquaredError,
            Target::Weighted {
                target: &[0.4, -0.1],
                weight: 1.0,
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_tanh_logistic() {
        let spec = MlpSpec::uniform(vec![3, 5, 5, 1], Activation::Tanh).unwrap();
        let net = Network::init(spec, 8);
        let err = grad_check(
            &net,
            &random_input(2, 3),
            LossKind::LogisticWithLogits,
            Target::Label(-1.0),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_rejects_zero_step() {
        let net = Network::init(MlpSpec::uniform(vec![1, 1], Activation::Relu).unwrap(), 0);
        assert!(grad_check(
            &net,
            &[1.0],
            LossKind::LogisticWithLogits,
            Target::Label(1.0),
            0.0
        )
        .is_err());
    }

    #[test]
    fn mean_grad_equals_grad_of_mean_loss() {
        let spec = MlpSpec::uniform(vec![3, 7, 2], Activation::Relu).unwrap();
        let net = Network::init(spec, 21);
        let batch = Tensor::matrix(6, 3, random_input(4, 18)).unwrap();
        let targets = Tensor::matrix(6, 2, random_input(5, 12)).unwrap();
        let weights = [0.5, 1.0, 2.0, 1.5, 0.1, 3.0];
        let (_, grads) = backward_per_sample(
            &net,
            &batch,
            LossKind::WeightedSquaredError,
            Targets::Weighted {
                targets: &targets,
                weights: &weights,
            },
        )
        .unwrap();
        // Gradient of the mean loss, accumulated in a single buffer.
        let mut direct = vec![0.0; net.num_params()];
        for i in 0..6 {
            let trace = net.trace(batch.row(i)).unwrap();
            let (_, og) = LossKind::WeightedSquaredError
                .evaluate(
                    trace.output(),
                    Target::Weighted {
                        target: targets.row(i),
                        weight: weights[i],
                    },
                )
                .unwrap();
            net.backprop(&trace, &og, &mut direct, 1.0 / 6.0);
        }
        for (a, b) in grads.mean().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_distance_cases() {
        let spec = MlpSpec::uniform(vec![3, 4, 1], Activation::Tanh).unwrap();
        let a = Network::init(spec.clone(), 1);
        assert_eq!(param_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.params_mut()[7] += 1.0;
        assert!((param_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);

        let c = Network::init(spec, 2);
        let oracle: f64 = a
            .params()
            .iter()
            .zip(c.params())
            .fold(0.0, |acc, (x, y)| acc + (x - y).powi(2))
            .sqrt();
        assert!((param_distance(&a, &c).unwrap() - oracle).abs() < 1e-14);

        let other = Network::init(MlpSpec::uniform(vec![3, 1], Activation::Tanh).unwrap(), 1);
        assert!(param_distance(&a, &other).is_err());
    }

    #[test]
    fn init_is_glorot_bounded() {
        let spec = MlpSpec::uniform(vec![10, 20, 1], Activation::Relu).unwrap();
        let net = Network::init(spec, 3);
        let s = (6.0f64 / 30.0).sqrt();
        assert!(net.params()[..200].iter().all(|w| w.abs() <= s));
        assert!(net.params()[200..220].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::uniform(vec![3], Activation::Relu).is_err());
        assert!(MlpSpec::uniform(vec![3, 0, 1], Activation::Relu).is_err());
        assert!(MlpSpec::new(vec![3, 2, 1], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..6) {
            let spec = MlpSpec::new(vec![3, hidden, 2], vec![Activation::Tanh]).unwrap();
            let mut net = Network::init(spec, seed);
            net.params_mut()[0] = 1.0 / 3.0;
            net.params_mut()[1] = -5e-324;
            let back = network_from_json(&network_to_json(&net).unwrap()).unwrap();
            prop_assert_eq!(back.seed(), net.seed());
            for (a, b) in back.params().iter().zip(net.params()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn param_distance_triangle(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            let spec = MlpSpec::uniform(vec![2, 3, 1], Activation::Relu).unwrap();
            let (a, b, c) = (Network::init(spec.clone(), s1), Network::init(spec.clone(), s2), Network::init(spec, s3));
            let ab = param_distance(&a, &b).unwrap();
            let bc = param_distance(&b, &c).unwrap();
            let ac = param_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn forward_is_deterministic(seed in any::<u64>()) {
            let spec = MlpSpec::uniform(vec![4, 5, 3], Activation::Tanh).unwrap();
            let net = Network::init(spec, seed);
            let x = random_input(seed ^ 1, 4);
            let a = net.forward_sample(&x).unwrap();
            let b = net.forward_sample(&x).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

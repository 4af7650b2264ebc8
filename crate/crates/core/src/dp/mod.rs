//! DP-SGD: per-sample clipping, Gaussian noise, and coupled runs on
//! neighbouring datasets.

mod clip;
mod config;
mod sgd;
mod trace;

pub use clip::{clip, clip_in_place};
pub use config::{DpSgdConfig, LearningRate, Sampling};
pub use sgd::{
    coupled_train, coupled_train_with, dp_step, noise_vector, train, BatchPlan, CoupledRun, DpSgd,
    Objective, SupervisedObjective,
};
pub use trace::{StepRecord, StepTrace};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{param_distance, Activation, MlpSpec, Network, PerSampleGrads, Tensor};
    use crate::rng::{rng_from_seed, RngPlan};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear(d: usize, seed: u64) -> Network {
        Network::init(
            MlpSpec::uniform(vec![d, 1], Activation::Tanh).unwrap(),
            seed,
        )
    }

    fn logistic_data(m: usize, d: usize, seed: u64) -> (Tensor, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut xs = Vec::with_capacity(m * d);
        let mut ys = Vec::with_capacity(m);
        for _ in 0..m {
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                + 0.5 * rng.sample::<f64, _>(StandardNormal);
            ys.push(if s >= 0.0 { 1.0 } else { -1.0 });
            xs.extend(x);
        }
        (Tensor::matrix(m, d, xs).unwrap(), ys)
    }

    #[test]
    fn zero_gradients_without_noise_is_a_fixed_point() {
        let net = linear(3, 1);
        let grads = PerSampleGrads::new(vec![vec![0.0; 4]; 5]).unwrap();
        let cfg = DpSgdConfig::new(1.0, 0.0, 5, 1, 0.1);
        let out = dp_step(&net, &grads, &cfg, 0.1, 9).unwrap();
        assert_eq!(out, net);
    }

    #[test]
    fn single_sample_no_noise_is_plain_sgd() {
        let net = linear(2, 4);
        let g = vec![0.3, -0.2, 0.1];
        let grads = PerSampleGrads::new(vec![g.clone()]).unwrap();
        let cfg = DpSgdConfig::new(1.0, 0.0, 1, 1, 0.5);
        let out = dp_step(&net, &grads, &cfg, 0.5, 0).unwrap();
        for ((o, p), gi) in out.params().iter().zip(net.params()).zip(&g) {
            assert_eq!(*o, p - 0.5 * gi);
        }
    }

    #[test]
    fn noisy_step_replays_from_recorded_seed() {
        let net = linear(2, 4);
        let raw = vec![vec![3.0, 4.0, 0.0], vec![0.1, 0.2, 0.3]];
        let grads = PerSampleGrads::new(raw.clone()).unwrap();
        let cfg = DpSgdConfig::new(1.0, 1.0, 2, 1, 0.1);
        let a = dp_step(&net, &grads, &cfg, 0.1, 77).unwrap();
        let b = dp_step(&net, &grads, &cfg, 0.1, 77).unwrap();
        assert_eq!(a, b);
        let clipped: Vec<Vec<f64>> = raw.iter().map(|g| clip(g, 1.0).unwrap()).collect();
        let noise = noise_vector(77, 3, 1.0 * 1.0 / 2.0);
        for k in 0..3 {
            let mean = (clipped[0][k] + clipped[1][k]) / 2.0;
            let expect = net.params()[k] - 0.1 * (mean + noise[k]);
            assert_eq!(a.params()[k], expect);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = linear(2, 4);
        let cfg = DpSgdConfig::new(1.0, 0.0, 1, 1, 0.1);
        assert!(dp_step(&net, &PerSampleGrads::new(vec![]).unwrap(), &cfg, 0.1, 0).is_err());
    }

    #[test]
    fn zero_steps_leave_network_unchanged() {
        let (x, y) = logistic_data(16, 3, 1);
        let obj = SupervisedObjective::logistic(&x, &y);
        let net = linear(3, 2);
        let cfg = DpSgdConfig::new(1.0, 1.0, 4, 0, 0.1);
        let (out, trace) = train(&net, &obj, &cfg, &RngPlan::new(5)).unwrap();
        assert_eq!(out, net);
        assert!(trace.is_empty());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (x, y) = logistic_data(40, 4, 2);
        let obj = SupervisedObjective::logistic(&x, &y);
        let net = linear(4, 3);
        let cfg = DpSgdConfig::new(1.0, 1.3, 8, 30, 0.2);
        let (a, ta) = train(&net, &obj, &cfg, &RngPlan::new(11)).unwrap();
        let (b, tb) = train(&net, &obj, &cfg, &RngPlan::new(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 30);
        assert!(ta.steps.iter().all(|s| s.clipped_norm_max <= 1.0 + 1e-12));
        let (c, _) = train(&net, &obj, &cfg, &RngPlan::new(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn convex_full_batch_loss_is_non_increasing() {
        let (x, y) = logistic_data(32, 3, 3);
        let obj = SupervisedObjective::logistic(&x, &y);
        let mut net = linear(3, 4);
        let cfg = DpSgdConfig::new(100.0, 0.0, 32, 1, 0.05);
        let mean_loss = |n: &Network| {
            (0..32)
                .map(|i| obj.example_loss(n, i, 0).unwrap())
                .sum::<f64>()
                / 32.0
        };
        let mut prev = mean_loss(&net);
        for s in 0..60 {
            net = train(&net, &obj, &cfg, &RngPlan::new(s)).unwrap().0;
            let cur = mean_loss(&net);
            assert!(cur <= prev + 1e-12, "step {s}: {cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn without_replacement_batches_cover_each_epoch() {
        let (x, y) = logistic_data(12, 2, 4);
        let obj = SupervisedObjective::logistic(&x, &y);
        let cfg = DpSgdConfig::new(1.0, 0.0, 4, 6, 0.1);
        let (_, trace) = train(&linear(2, 0), &obj, &cfg, &RngPlan::new(3)).unwrap();
        for epoch in trace.steps.chunks(3) {
            let mut seen: Vec<usize> = epoch.iter().flat_map(|s| s.batch.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn poisson_batches_vary_in_size() {
        let (x, y) = logistic_data(50, 2, 4);
        let obj = SupervisedObjective::logistic(&x, &y);
        let mut cfg = DpSgdConfig::new(1.0, 0.5, 10, 40, 0.1);
        cfg.sampling = Sampling::Poisson;
        let (_, trace) = train(&linear(2, 0), &obj, &cfg, &RngPlan::new(3)).unwrap();
        let sizes: Vec<usize> = trace.steps.iter().map(|s| s.batch.len()).collect();
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        assert!(sizes.iter().any(|&s| s != 10));
        assert!((mean - 10.0).abs() < 3.0);
    }

    #[test]
    fn coupled_runs_share_batches_and_noise() {
        let (x, y) = logistic_data(20, 3, 5);
        let obj = SupervisedObjective::logistic(&x, &y);
        let cfg = DpSgdConfig::new(1.0, 2.0, 5, 25, 0.1);
        let run = coupled_train(&linear(3, 1), &obj, 7, &cfg, &RngPlan::new(8)).unwrap();
        for (a, b) in run.full_trace.steps.iter().zip(&run.reduced_trace.steps) {
            assert_eq!(a.noise_seed, b.noise_seed);
            let expect: Vec<usize> = a.batch.iter().copied().filter(|&i| i != 7).collect();
            assert_eq!(b.batch, expect);
        }
        assert_eq!(run.divergence.len(), 26);
        assert!(*run.divergence.last().unwrap() > 0.0);
    }

    #[test]
    fn coupled_identical_updates_when_removed_index_never_sampled() {
        let (x, y) = logistic_data(12, 3, 6);
        let obj = SupervisedObjective::logistic(&x, &y);
        let cfg = DpSgdConfig::new(1.0, 0.0, 3, 8, 0.2);
        let script: Vec<Vec<usize>> = (0..8)
            .map(|t| vec![t % 11, (t + 3) % 11, (t + 5) % 11])
            .collect();
        let run = coupled_train_with(
            &linear(3, 2),
            &obj,
            11,
            &cfg,
            &RngPlan::new(1),
            BatchPlan::Scripted(script),
        )
        .unwrap();
        assert!(run.divergence.iter().all(|&d| d == 0.0));
        assert_eq!(param_distance(&run.full, &run.reduced).unwrap(), 0.0);
    }

    #[test]
    fn single_step_divergence_hand_bound() {
        // m = b = 2, C = 1, α = 0.1: mean over two clipped gradients vs one.
        let x = Tensor::matrix(2, 2, vec![3.0, -1.0, -2.0, 4.0]).unwrap();
        let y = [1.0, -1.0];
        let obj = SupervisedObjective::logistic(&x, &y);
        let cfg = DpSgdConfig::new(1.0, 1.0, 2, 1, 0.1);
        for seed in 0..20 {
            let run = coupled_train(&linear(2, seed), &obj, 0, &cfg, &RngPlan::new(seed)).unwrap();
            assert!(
                run.divergence[1] <= 0.1 * (0.5 + 1.0) + 1e-12,
                "{}",
                run.divergence[1]
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = DpSgdConfig::new(1.0, 1.0, 4, 10, 0.1);
        assert!(cfg.validate().is_ok());
        cfg.clip_norm = None;
        assert!(cfg.validate().is_err());
        cfg.noise_multiplier = 0.0;
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = LearningRate::Schedule(vec![0.1; 5]);
        assert!(cfg.validate().is_err());
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let (x, y) = logistic_data(10, 2, 4);
        let obj = SupervisedObjective::logistic(&x, &y);
        let cfg = DpSgdConfig::new(1.0, 1.0, 5, 4, 0.1);
        let (_, trace) = train(&linear(2, 0), &obj, &cfg, &RngPlan::new(3)).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(StepTrace::read_jsonl(&text).unwrap(), trace);
    }
}

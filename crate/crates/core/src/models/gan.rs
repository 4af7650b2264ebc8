use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{one_hot, Dataset};
use crate::dp::{DpSgd, DpSgdConfig, Objective, StepTrace};
use crate::error::{Error, Result};
use crate::nn::{logistic_loss, softplus, Activation, MlpSpec, Network, Provenance, Tensor};
use crate::rng::{derive_seed, rng_from_seed, RngPlan, Stream};

/// When the generator gets to move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GanRegime {
    /// One generator update after every `n_d` discriminator steps.
    Fixed { n_d: usize },
    /// A generator update after any discriminator step whose accuracy on
    /// fake samples reaches `target_accuracy`.
    Adaptive { target_accuracy: f64 },
}

impl Default for GanRegime {
    fn default() -> Self {
        GanRegime::Fixed { n_d: 5 }
    }
}

impl GanRegime {
    pub fn adaptive() -> Self {
        GanRegime::Adaptive {
            target_accuracy: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GanRegime::Fixed { n_d: 0 } => Err(Error::Config("n_d must be at least 1".into())),
            GanRegime::Adaptive { target_accuracy } if !(0.0..=1.0).contains(&target_accuracy) => {
                Err(Error::Config(format!(
                    "target accuracy {target_accuracy} outside [0, 1]"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Decides after each discriminator step whether to update the generator.
#[derive(Debug, Clone)]
pub struct UpdateController {
    regime: GanRegime,
    since_update: usize,
}

impl UpdateController {
    pub fn new(regime: GanRegime) -> Self {
        Self {
            regime,
            since_update: 0,
        }
    }

    pub fn after_disc_step(&mut self, fake_accuracy: f64) -> bool {
        match self.regime {
            GanRegime::Fixed { n_d } => {
                self.since_update += 1;
                if self.since_update == n_d {
                    self.since_update = 0;
                    true
                } else {
                    false
                }
            }
            GanRegime::Adaptive { target_accuracy } => fake_accuracy >= target_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub regime: GanRegime,
    pub gen_learning_rate: f64,
    pub gen_batch_size: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            gen_hidden: vec![256, 256],
            disc_hidden: vec![256, 256],
            regime: GanRegime::default(),
            gen_learning_rate: 3e-4,
            gen_batch_size: 128,
        }
    }
}

/// Class-conditional generator/discriminator pair. The generator maps
/// `[z, one_hot(y)]` through `tanh` into data space; the discriminator maps
/// `[x, one_hot(y)]` to one raw logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub generator: Network,
    pub discriminator: Network,
    pub latent_dim: usize,
    pub data_dim: usize,
    pub n_classes: usize,
    pub regime: GanRegime,
}

pub fn conditioned(x: &[f64], label: usize, n_classes: usize) -> Vec<f64> {
    let mut v = x.to_vec();
    v.extend(one_hot(Some(label), n_classes));
    v
}

impl GanModel {
    pub fn init(cfg: &GanConfig, data_dim: usize, n_classes: usize, seed: u64) -> Result<Self> {
        cfg.regime.validate()?;
        let mut gw = vec![cfg.latent_dim + n_classes];
        gw.extend(&cfg.gen_hidden);
        gw.push(data_dim);
        let mut dw = vec![data_dim + n_classes];
        dw.extend(&cfg.disc_hidden);
        dw.push(1);
        Ok(Self {
            generator: Network::init(
                MlpSpec::uniform(gw, Activation::Relu)?,
                derive_seed(seed, &[0]),
            ),
            discriminator: Network::init(
                MlpSpec::uniform(dw, Activation::Relu)?,
                derive_seed(seed, &[1]),
            ),
            latent_dim: cfg.latent_dim,
            data_dim,
            n_classes,
            regime: cfg.regime,
        })
    }

    pub fn generate_one(&self, z: &[f64], label: usize) -> Result<Vec<f64>> {
        let out = self
            .generator
            .forward_sample(&conditioned(z, label, self.n_classes))?;
        Ok(out.into_iter().map(f64::tanh).collect())
    }

    /// The discriminator's raw logit for `(x, label)`.
    pub fn logit(&self, x: &[f64], label: usize) -> Result<f64> {
        Ok(self
            .discriminator
            .forward_sample(&conditioned(x, label, self.n_classes))?[0])
    }

    /// `n` samples with labels cycling through the classes unless fixed.
    pub fn sample(
        &self,
        n: usize,
        label: Option<usize>,
        seed: u64,
    ) -> Result<(Tensor, Vec<usize>)> {
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::with_capacity(n * self.data_dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = label.unwrap_or(i % self.n_classes);
            let z: Vec<f64> = (0..self.latent_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            out.extend(self.generate_one(&z, y)?);
            labels.push(y);
        }
        Ok((Tensor::matrix(n, self.data_dim, out)?, labels))
    }
}

/// Per-sample logistic losses: real rows against label +1, then fake rows
/// against label −1.
pub fn gan_disc_loss(
    disc: &Network,
    real: &Tensor,
    real_labels: &[usize],
    fake: &Tensor,
    fake_labels: &[usize],
    n_classes: usize,
) -> Result<Vec<f64>> {
    if real.rows() != real_labels.len() || fake.rows() != fake_labels.len() {
        return Err(Error::Dimension(
            "label count does not match batch rows".into(),
        ));
    }
    let mut losses = Vec::with_capacity(real.rows() + fake.rows());
    for (rows, labels, y) in [(real, real_labels, 1.0), (fake, fake_labels, -1.0)] {
        for (x, &c) in rows.iter_rows().zip(labels) {
            let logit = disc.forward_sample(&conditioned(x, c, n_classes))?[0];
            losses.push(logistic_loss(logit, y).0);
        }
    }
    Ok(losses)
}

/// Loss and discriminator gradient of one (real, fake) pair, plus the fake
/// logit. The pair is the unit that DP-SGD clips.
pub fn disc_pair_loss_grad(
    disc: &Network,
    real: (&[f64], usize),
    fake: (&[f64], usize),
    n_classes: usize,
) -> Result<(f64, Vec<f64>, f64)> {
    let mut grad = vec![0.0; disc.num_params()];
    let (loss, fake_logit) = accumulate_pair_grad(disc, real, fake, n_classes, &mut grad)?;
    Ok((loss, grad, fake_logit))
}

fn accumulate_pair_grad(
    disc: &Network,
    real: (&[f64], usize),
    fake: (&[f64], usize),
    n_classes: usize,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut fake_logit = 0.0;
    for ((x, c), y) in [(real, 1.0), (fake, -1.0)] {
        let trace = disc.trace(&conditioned(x, c, n_classes))?;
        let logit = trace.output()[0];
        let (l, d) = logistic_loss(logit, y);
        total += l;
        disc.backprop_params(&trace, &[d], grad, 1.0);
        if y < 0.0 {
            fake_logit = logit;
        }
    }
    Ok((total, fake_logit))
}

/// Non-saturating generator loss and its gradient with respect to the
/// generator parameters only.
#[derive(Debug, Clone, PartialEq)]
pub struct GenLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Mean of `log(1 + e^{−D(G(z))})` over the latent rows. The discriminator
/// is borrowed immutably and the latent batch must not carry private data.
pub fn gan_gen_loss(
    disc: &Network,
    gen: &Network,
    latent: &Tensor,
    labels: &[usize],
    n_classes: usize,
) -> Result<GenLoss> {
    if latent.provenance() == Provenance::Private {
        return Err(Error::PrivacyViolation(
            "generator update received a tensor derived from private data".into(),
        ));
    }
    if latent.rows() != labels.len() {
        return Err(Error::Dimension(
            "label count does not match latent rows".into(),
        ));
    }
    let data_dim = gen.spec().output_width();
    let mut grad = vec![0.0; gen.num_params()];
    let mut total = 0.0;
    let scale = 1.0 / latent.rows().max(1) as f64;
    for (z, &c) in latent.iter_rows().zip(labels) {
        let gt = gen.trace(&conditioned(z, c, n_classes))?;
        let x: Vec<f64> = gt.output().iter().map(|v| v.tanh()).collect();
        let dt = disc.trace(&conditioned(&x, c, n_classes))?;
        let logit = dt.output()[0];
        total += softplus(-logit);
        let dlogit = -crate::nn::sigmoid(-logit);
        let dx = disc.input_grad(&dt, &[dlogit]);
        let dout: Vec<f64> = dx[..data_dim]
            .iter()
            .zip(&x)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        gen.backprop_params(&gt, &dout, &mut grad, scale);
    }
    Ok(GenLoss {
        loss: total * scale,
        grad,
    })
}

/// Discriminator training against a frozen generator, as a plain DP-SGD
/// objective. Each example is paired with a fake drawn from an rng keyed by
/// `(seed, step, index)`, the same pairing [`gan_train`] uses.
pub struct GanDiscObjective<'a> {
    pub data: &'a Dataset,
    pub generator: &'a Network,
    pub latent_dim: usize,
    pub seed: u64,
}

impl GanDiscObjective<'_> {
    fn fake(&self, index: usize, step: usize) -> Result<(Vec<f64>, usize)> {
        let k = self.data.n_classes();
        let mut rng = rng_from_seed(derive_seed(self.seed, &[step as u64, index as u64]));
        let z: Vec<f64> = (0..self.latent_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let label = rng.gen_range(0..k);
        let x = self
            .generator
            .forward_sample(&conditioned(&z, label, k))?
            .into_iter()
            .map(f64::tanh)
            .collect();
        Ok((x, label))
    }
}

impl Objective for GanDiscObjective<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn accumulate_grad(
        &self,
        net: &Network,
        index: usize,
        step: usize,
        grad: &mut [f64],
    ) -> Result<f64> {
        let (fake, label) = self.fake(index, step)?;
        let real = (self.data.x(index), self.data.y(index));
        Ok(accumulate_pair_grad(net, real, (&fake, label), self.data.n_classes(), grad)?.0)
    }

    fn example_loss(&self, net: &Network, index: usize, step: usize) -> Result<f64> {
        let (fake, label) = self.fake(index, step)?;
        let k = self.data.n_classes();
        let real = net.forward_sample(&conditioned(self.data.x(index), self.data.y(index), k))?[0];
        let fake = net.forward_sample(&conditioned(&fake, label, k))?[0];
        Ok(logistic_loss(real, 1.0).0 + logistic_loss(fake, -1.0).0)
    }
}

/// A trained GAN with its audit trail.
#[derive(Debug, Clone)]
pub struct GanRun {
    pub model: GanModel,
    /// Discriminator steps only; these are what the accountant counts.
    pub trace: StepTrace,
    pub generator_updates: usize,
    pub fake_accuracy: Vec<f64>,
}

/// DP-SGD on the discriminator, plain SGD on the generator.
pub fn gan_train(
    data: &Dataset,
    dp: &DpSgdConfig,
    cfg: &GanConfig,
    plan: &RngPlan,
) -> Result<GanRun> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    let mut model = GanModel::init(
        cfg,
        data.dim(),
        data.n_classes(),
        plan.stream_seed(Stream::ModelInit),
    )?;
    let mut engine = DpSgd::new(dp, plan, data.len())?;
    let mut controller = UpdateController::new(cfg.regime);
    let fake_root = plan.stream_seed(Stream::DataNoise);
    let gen_root = derive_seed(fake_root, &[u64::MAX]);
    let (k, latent_dim) = (data.n_classes(), cfg.latent_dim);
    let mut generator_updates = 0;
    let mut fake_accuracy = Vec::with_capacity(dp.steps);

    for t in 0..dp.steps {
        let GanModel {
            generator,
            discriminator,
            ..
        } = &mut model;
        let mut correct = 0usize;
        let mut seen = 0usize;
        engine.step_each(discriminator, |d, idx, buf| {
            let mut rng = rng_from_seed(derive_seed(fake_root, &[t as u64, idx as u64]));
            let z: Vec<f64> = (0..latent_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let fake_label = rng.gen_range(0..k);
            let fake: Vec<f64> = generator
                .forward_sample(&conditioned(&z, fake_label, k))?
                .into_iter()
                .map(f64::tanh)
                .collect();
            let (_, fake_logit) =
                accumulate_pair_grad(d, (data.x(idx), data.y(idx)), (&fake, fake_label), k, buf)?;
            seen += 1;
            if fake_logit < 0.0 {
                correct += 1;
            }
            Ok(())
        })?;
        let acc = if seen == 0 {
            0.0
        } else {
            correct as f64 / seen as f64
        };
        fake_accuracy.push(acc);
        if controller.after_disc_step(acc) {
            let mut rng = rng_from_seed(derive_seed(gen_root, &[t as u64]));
            let n = cfg.gen_batch_size;
            let z: Vec<f64> = (0..n * latent_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let latent = Tensor::matrix(n, latent_dim, z)?;
            let step = gan_gen_loss(discriminator, generator, &latent, &labels, k)
                .map_err(|e| e.at_step(t))?;
            for (p, g) in generator.params_mut().iter_mut().zip(&step.grad) {
                *p -= cfg.gen_learning_rate * g;
            }
            generator_updates += 1;
        }
    }
    Ok(GanRun {
        model,
        trace: engine.into_trace(),
        generator_updates,
        fake_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthKind};
    use crate::nn::norm;

    fn bias_only_disc(logit: f64, width: usize) -> Network {
        let spec = MlpSpec::uniform(vec![width, 1], Activation::Relu).unwrap();
        let mut params = vec![0.0; width + 1];
        params[width] = logit;
        Network::from_params(spec, 0, params).unwrap()
    }

    #[test]
    fn disc_loss_examples() {
        let real = Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap();
        let fake = Tensor::matrix(1, 2, vec![-0.3, 0.4]).unwrap();
        let zero = bias_only_disc(0.0, 4);
        let l = gan_disc_loss(&zero, &real, &[0], &fake, &[1], 2).unwrap();
        assert!((l[0] - 2f64.ln()).abs() < 1e-15 && (l[1] - 2f64.ln()).abs() < 1e-15);
        assert!((l.iter().sum::<f64>() - 2.0 * 2f64.ln()).abs() < 1e-15);

        let confident = bias_only_disc(10.0, 4);
        let l = gan_disc_loss(&confident, &real, &[0], &fake, &[1], 2).unwrap();
        assert!((l[0] / (-10f64).exp().ln_1p() - 1.0).abs() < 1e-12);
        assert!((l[0] - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn gen_loss_examples_and_partition() {
        let gen = Network::init(
            MlpSpec::uniform(vec![3 + 2, 4, 4], Activation::Relu).unwrap(),
            1,
        );
        let latent = Tensor::matrix(2, 3, vec![0.1, -0.4, 1.0, 0.3, 0.2, -0.8]).unwrap();
        let zero = bias_only_disc(0.0, 6);
        let gl = gan_gen_loss(&zero, &gen, &latent, &[0, 1], 2).unwrap();
        assert!((gl.loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(gl.grad.len(), gen.num_params());
        assert_eq!(norm(&gl.grad), 0.0);

        let winning = bias_only_disc(10.0, 6);
        let gl = gan_gen_loss(&winning, &gen, &latent, &[0, 1], 2).unwrap();
        assert!((gl.loss - 4.54e-5).abs() < 1e-7);

        let private = latent.clone().with_provenance(Provenance::Private);
        assert!(matches!(
            gan_gen_loss(&winning, &gen, &private, &[0, 1], 2),
            Err(Error::PrivacyViolation(_))
        ));
    }

    #[test]
    fn gen_gradient_matches_finite_differences() {
        let gen = Network::init(
            MlpSpec::uniform(vec![3 + 2, 5, 4], Activation::Tanh).unwrap(),
            3,
        );
        let disc = Network::init(
            MlpSpec::uniform(vec![4 + 2, 5, 1], Activation::Tanh).unwrap(),
            4,
        );
        let latent = Tensor::matrix(2, 3, vec![0.5, -0.4, 1.0, 0.3, 0.9, -0.8]).unwrap();
        let gl = gan_gen_loss(&disc, &gen, &latent, &[1, 0], 2).unwrap();
        let h = 1e-5;
        let mut probe = gen.clone();
        for k in 0..gen.num_params() {
            let orig = probe.params()[k];
            probe.params_mut()[k] = orig + h;
            let up = gan_gen_loss(&disc, &probe, &latent, &[1, 0], 2)
                .unwrap()
                .loss;
            probe.params_mut()[k] = orig - h;
            let down = gan_gen_loss(&disc, &probe, &latent, &[1, 0], 2)
                .unwrap()
                .loss;
            probe.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (gl.grad[k] - fd).abs() / gl.grad[k].abs().max(1.0) < 1e-7,
                "param {k}"
            );
        }
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let disc = Network::init(
            MlpSpec::uniform(vec![3 + 2, 6, 1], Activation::Tanh).unwrap(),
            8,
        );
        let (r, f) = ([0.2, -0.5, 0.9], [0.7, 0.1, -0.3]);
        let loss = |d: &Network| disc_pair_loss_grad(d, (&r, 0), (&f, 1), 2).unwrap().0;
        let (_, g, _) = disc_pair_loss_grad(&disc, (&r, 0), (&f, 1), 2).unwrap();
        let mut probe = disc.clone();
        for k in 0..disc.num_params() {
            let orig = probe.params()[k];
            probe.params_mut()[k] = orig + 1e-5;
            let up = loss(&probe);
            probe.params_mut()[k] = orig - 1e-5;
            let down = loss(&probe);
            probe.params_mut()[k] = orig;
            assert!((g[k] - (up - down) / 2e-5).abs() < 1e-7);
        }
    }

    #[test]
    fn fixed_regime_counts() {
        let mut c = UpdateController::new(GanRegime::Fixed { n_d: 5 });
        let updates = (0..50).filter(|_| c.after_disc_step(0.0)).count();
        assert_eq!(updates, 10);
    }

    #[test]
    fn adaptive_regime_follows_accuracy() {
        let mut c = UpdateController::new(GanRegime::adaptive());
        let fired: Vec<bool> = [1.0, 1.0, 0.3]
            .iter()
            .map(|&a| c.after_disc_step(a))
            .collect();
        assert_eq!(fired, vec![true, true, false]);
    }

    #[test]
    fn regime_validation() {
        assert!(GanRegime::Fixed { n_d: 0 }.validate().is_err());
        assert!(GanRegime::Adaptive {
            target_accuracy: 1.5
        }
        .validate()
        .is_err());
    }

    fn tiny_cfg(regime: GanRegime) -> GanConfig {
        GanConfig {
            latent_dim: 4,
            gen_hidden: vec![8],
            disc_hidden: vec![8],
            regime,
            gen_learning_rate: 0.01,
            gen_batch_size: 8,
        }
    }

    #[test]
    fn zero_steps_leave_networks_untouched() {
        let data = synth_dataset(SynthKind::GaussianMixture, 16, 0).unwrap();
        let cfg = tiny_cfg(GanRegime::Fixed { n_d: 1 });
        let plan = RngPlan::new(1);
        let run = gan_train(&data, &DpSgdConfig::new(1.0, 1.0, 4, 0, 0.1), &cfg, &plan).unwrap();
        let fresh = GanModel::init(&cfg, 2, 4, plan.stream_seed(Stream::ModelInit)).unwrap();
        assert_eq!(run.model, fresh);
        assert_eq!(run.generator_updates, 0);
    }

    #[test]
    fn training_counts_updates_and_is_deterministic() {
        let data = synth_dataset(SynthKind::GaussianMixture, 32, 0).unwrap();
        let cfg = tiny_cfg(GanRegime::Fixed { n_d: 5 });
        let dp = DpSgdConfig::new(1.0, 0.5, 8, 50, 0.05);
        let a = gan_train(&data, &dp, &cfg, &RngPlan::new(2)).unwrap();
        let b = gan_train(&data, &dp, &cfg, &RngPlan::new(2)).unwrap();
        assert_eq!(a.generator_updates, 10);
        assert_eq!(a.trace.len(), 50);
        assert_eq!(a.model, b.model);
        assert!(a
            .trace
            .steps
            .iter()
            .all(|s| s.clipped_norm_max <= 1.0 + 1e-12));

        let adaptive = gan_train(
            &data,
            &dp,
            &tiny_cfg(GanRegime::adaptive()),
            &RngPlan::new(2),
        )
        .unwrap();
        let expected = adaptive.fake_accuracy.iter().filter(|&&a| a >= 0.7).count();
        assert_eq!(adaptive.generator_updates, expected);
    }

    #[test]
    fn frozen_generator_objective_gradient_matches_loss() {
        let data = synth_dataset(SynthKind::GaussianMixture, 8, 3).unwrap();
        let model = GanModel::init(&tiny_cfg(GanRegime::default()), 2, 4, 5).unwrap();
        let obj = GanDiscObjective {
            data: &data,
            generator: &model.generator,
            latent_dim: model.latent_dim,
            seed: 9,
        };
        let (loss, grad) = obj.example_loss_grad(&model.discriminator, 3, 7).unwrap();
        assert!((loss - obj.example_loss(&model.discriminator, 3, 7).unwrap()).abs() < 1e-12);
        let mut probe = model.discriminator.clone();
        let h = 1e-6;
        for k in [0, 5, probe.num_params() - 1] {
            let orig = probe.params()[k];
            probe.params_mut()[k] = orig + h;
            let up = obj.example_loss(&probe, 3, 7).unwrap();
            probe.params_mut()[k] = orig - h;
            let down = obj.example_loss(&probe, 3, 7).unwrap();
            probe.params_mut()[k] = orig;
            assert!((grad[k] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
    }
}

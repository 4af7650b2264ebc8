use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{one_hot, Dataset};
use crate::dp::{train, DpSgdConfig, Objective, StepTrace};
use crate::error::{Error, Result};
use crate::nn::{Activation, LossKind, MlpSpec, Network, Target};
use crate::rng::{derive_seed, rng_from_seed, RngPlan, Stream};

/// Noise-level distribution and loss settings of the EDM objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdmConfig {
    pub sigma_data: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Number of `(σ_k, ε_k)` terms averaged per example (`K`).
    pub noise_multiplicity: usize,
    /// Probability of replacing the class label by the null label while training.
    pub label_dropout: f64,
}

impl Default for EdmConfig {
    fn default() -> Self {
        Self {
            sigma_data: 0.5,
            p_mean: -1.2,
            p_std: 1.2,
            sigma_min: 0.002,
            sigma_max: 80.0,
            noise_multiplicity: 32,
            label_dropout: 0.1,
        }
    }
}

impl EdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_multiplicity < 1 {
            return Err(Error::Config(
                "noise multiplicity K must be at least 1".into(),
            ));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::Config(format!(
                "sigma_data must be positive, got {}",
                self.sigma_data
            )));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.p_std >= 0.0 && self.p_mean.is_finite() && self.p_std.is_finite()) {
            return Err(Error::Config(
                "log-normal parameters must be finite with p_std ≥ 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.label_dropout) {
            return Err(Error::Config(format!(
                "label dropout {} outside [0, 1)",
                self.label_dropout
            )));
        }
        Ok(())
    }

    /// Smallest loss weight on the admissible σ range, reached at `sigma_max`.
    pub fn lambda_min(&self) -> f64 {
        lambda(self.sigma_max, self.sigma_data)
    }
}

fn lambda(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
}

/// `λ(σ) = (σ² + σ_data²) / (σ·σ_data)²`.
pub fn edm_weight(sigma: f64, sigma_data: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(sigma_data > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss weight needs σ > 0 and σ_data > 0, got σ = {sigma}, σ_data = {sigma_data}"
        )));
    }
    Ok(lambda(sigma, sigma_data))
}

/// `σ = exp(p_mean + p_std·g)·σ_data`, clamped to `[sigma_min, sigma_max]`.
pub fn sample_sigma<R: Rng + ?Sized>(cfg: &EdmConfig, rng: &mut R) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    ((cfg.p_mean + cfg.p_std * g).exp() * cfg.sigma_data).clamp(cfg.sigma_min, cfg.sigma_max)
}

/// One recorded `(σ_k, ε_k)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub sigma: f64,
    pub eps: Vec<f64>,
}

/// `count` draws, each sampling σ first and then ε.
pub fn draw_noise<R: Rng + ?Sized>(
    cfg: &EdmConfig,
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Vec<NoiseDraw> {
    (0..count)
        .map(|_| {
            let sigma = sample_sigma(cfg, rng);
            let eps = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            NoiseDraw { sigma, eps }
        })
        .collect()
}

/// Network input for a noisy sample: scaled state, log-σ embedding, one-hot label.
pub fn denoiser_input(
    x_sigma: &[f64],
    sigma: f64,
    label: Option<usize>,
    n_classes: usize,
    sigma_data: f64,
) -> Vec<f64> {
    let c_in = 1.0 / (sigma * sigma + sigma_data * sigma_data).sqrt();
    let mut v: Vec<f64> = x_sigma.iter().map(|x| c_in * x).collect();
    v.push(sigma.ln() / 4.0);
    v.extend(one_hot(label, n_classes));
    v
}

/// The EDM denoising loss for a fixed conditioning layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmLoss {
    pub cfg: EdmConfig,
    pub n_classes: usize,
}

impl EdmLoss {
    fn noisy(x: &[f64], draw: &NoiseDraw) -> Result<Vec<f64>> {
        if draw.eps.len() != x.len() {
            return Err(Error::Dimension(format!(
                "noise of width {} for a sample of width {}",
                draw.eps.len(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(&draw.eps)
            .map(|(a, e)| a + draw.sigma * e)
            .collect())
    }

    fn input(&self, x: &[f64], label: Option<usize>, draw: &NoiseDraw) -> Result<Vec<f64>> {
        Ok(denoiser_input(
            &Self::noisy(x, draw)?,
            draw.sigma,
            label,
            self.n_classes,
            self.cfg.sigma_data,
        ))
    }

    /// Squared residuals of an arbitrary noise predictor `(x_σ, σ) ↦ ε̂`.
    pub fn residuals_with<P>(
        &self,
        mut predict: P,
        x: &[f64],
        draws: &[NoiseDraw],
    ) -> Result<Vec<f64>>
    where
        P: FnMut(&[f64], f64) -> Result<Vec<f64>>,
    {
        draws
            .iter()
            .map(|d| {
                let out = predict(&Self::noisy(x, d)?, d.sigma)?;
                if out.len() != d.eps.len() {
                    return Err(Error::Dimension(format!(
                        "prediction width {} for noise width {}",
                        out.len(),
                        d.eps.len()
                    )));
                }
                Ok(out.iter().zip(&d.eps).map(|(p, e)| (p - e).powi(2)).sum())
            })
            .collect()
    }

    /// Squared residuals `‖ε_θ(x + σ_k ε_k, σ_k) − ε_k‖²`, one per draw.
    pub fn residuals(
        &self,
        net: &Network,
        x: &[f64],
        label: Option<usize>,
        draws: &[NoiseDraw],
    ) -> Result<Vec<f64>> {
        self.residuals_with(
            |xs, sigma| {
                net.forward_sample(&denoiser_input(
                    xs,
                    sigma,
                    label,
                    self.n_classes,
                    self.cfg.sigma_data,
                ))
            },
            x,
            draws,
        )
    }

    /// `λ(σ_k)`-weighted residuals, one per draw.
    pub fn weighted_terms(
        &self,
        net: &Network,
        x: &[f64],
        label: Option<usize>,
        draws: &[NoiseDraw],
    ) -> Result<Vec<f64>> {
        let r = self.residuals(net, x, label, draws)?;
        draws
            .iter()
            .zip(r)
            .map(|(d, r)| Ok(edm_weight(d.sigma, self.cfg.sigma_data)? * r))
            .collect()
    }

    /// `(1/K) Σ_k λ(σ_k)·‖ε_θ(x + σ_k ε_k, σ_k) − ε_k‖²` over the given draws.
    pub fn loss(
        &self,
        net: &Network,
        x: &[f64],
        label: Option<usize>,
        draws: &[NoiseDraw],
    ) -> Result<f64> {
        if draws.is_empty() {
            return Err(Error::InvalidArgument(
                "loss needs at least one noise draw".into(),
            ));
        }
        Ok(self
            .weighted_terms(net, x, label, draws)?
            .iter()
            .sum::<f64>()
            / draws.len() as f64)
    }

    /// Unweighted mean residual, the membership score.
    pub fn score(
        &self,
        net: &Network,
        x: &[f64],
        label: Option<usize>,
        draws: &[NoiseDraw],
    ) -> Result<f64> {
        if draws.is_empty() {
            return Err(Error::InvalidArgument(
                "score needs at least one probe".into(),
            ));
        }
        Ok(self.residuals(net, x, label, draws)?.iter().sum::<f64>() / draws.len() as f64)
    }

    /// Loss and its parameter gradient; all K terms feed one gradient.
    pub fn loss_grad(
        &self,
        net: &Network,
        x: &[f64],
        label: Option<usize>,
        draws: &[NoiseDraw],
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; net.num_params()];
        let loss = self.accumulate_grad(net, x, label, draws, &mut grad)?;
        Ok((loss, grad))
    }

    /// Add the loss gradient into `grad` and return the loss.
    pub fn accumulate_grad(
        &self,
        net: &Network,
        x: &[f64],
        label: Option<usize>,
        draws: &[NoiseDraw],
        grad: &mut [f64],
    ) -> Result<f64> {
        if draws.is_empty() {
            return Err(Error::InvalidArgument(
                "loss needs at least one noise draw".into(),
            ));
        }
        let scale = 1.0 / draws.len() as f64;
        let mut total = 0.0;
        for d in draws {
            let trace = net.trace(&self.input(x, label, d)?)?;
            let weight = edm_weight(d.sigma, self.cfg.sigma_data)?;
            let (l, out_grad) = LossKind::WeightedSquaredError.evaluate(
                trace.output(),
                Target::Weighted {
                    target: &d.eps,
                    weight,
                },
            )?;
            total += l;
            net.backprop_params(&trace, &out_grad, grad, scale);
        }
        Ok(total * scale)
    }
}

/// Draw `K` fresh terms from `rng` and evaluate the loss on them, returning
/// the draws for replay.
pub fn edm_loss<R: Rng + ?Sized>(
    net: &Network,
    loss: &EdmLoss,
    x: &[f64],
    label: Option<usize>,
    k: usize,
    rng: &mut R,
) -> Result<(f64, Vec<NoiseDraw>)> {
    if k < 1 {
        return Err(Error::InvalidArgument(
            "noise multiplicity K must be at least 1".into(),
        ));
    }
    let draws = draw_noise(&loss.cfg, x.len(), k, rng);
    Ok((loss.loss(net, x, label, &draws)?, draws))
}

/// The diffusion training objective over a dataset. Each `(step, index)`
/// pair owns an rng, so coupled runs see identical draws for shared examples.
pub struct DiffusionObjective<'a> {
    pub data: &'a Dataset,
    pub loss: EdmLoss,
    pub seed: u64,
}

impl DiffusionObjective<'_> {
    /// Label (after dropout) and noise draws used for `index` at `step`.
    pub fn draws(&self, index: usize, step: usize) -> (Option<usize>, Vec<NoiseDraw>) {
        let mut rng = rng_from_seed(derive_seed(self.seed, &[step as u64, index as u64]));
        let label = if rng.gen::<f64>() < self.loss.cfg.label_dropout {
            None
        } else {
            Some(self.data.y(index))
        };
        let draws = draw_noise(
            &self.loss.cfg,
            self.data.dim(),
            self.loss.cfg.noise_multiplicity,
            &mut rng,
        );
        (label, draws)
    }
}

impl Objective for DiffusionObjective<'_> {
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
        let (label, draws) = self.draws(index, step);
        self.loss
            .accumulate_grad(net, self.data.x(index), label, &draws, grad)
    }

    fn example_loss(&self, net: &Network, index: usize, step: usize) -> Result<f64> {
        let (label, draws) = self.draws(index, step);
        self.loss.loss(net, self.data.x(index), label, &draws)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub edm: EdmConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            edm: EdmConfig::default(),
            hidden: vec![256, 256],
            activation: Activation::Relu,
        }
    }
}

/// A class-conditional noise-prediction network with its EDM settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub denoiser: Network,
    pub edm: EdmConfig,
    pub data_dim: usize,
    pub n_classes: usize,
}

impl DiffusionModel {
    pub fn init(
        cfg: &DiffusionConfig,
        data_dim: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.edm.validate()?;
        let mut widths = vec![data_dim + 1 + n_classes];
        widths.extend(&cfg.hidden);
        widths.push(data_dim);
        let spec = MlpSpec::uniform(widths, cfg.activation)?;
        Ok(Self {
            denoiser: Network::init(spec, seed),
            edm: cfg.edm,
            data_dim,
            n_classes,
        })
    }

    pub fn loss(&self) -> EdmLoss {
        EdmLoss {
            cfg: self.edm,
            n_classes: self.n_classes,
        }
    }

    pub fn predict_noise(
        &self,
        x_sigma: &[f64],
        sigma: f64,
        label: Option<usize>,
    ) -> Result<Vec<f64>> {
        let input = denoiser_input(x_sigma, sigma, label, self.n_classes, self.edm.sigma_data);
        self.denoiser.forward_sample(&input)
    }

    /// `ε̂_u + g·(ε̂_c − ε̂_u)`; the unconditional pass uses the null label.
    pub fn predict_noise_guided(
        &self,
        x_sigma: &[f64],
        sigma: f64,
        label: Option<usize>,
        guidance: f64,
    ) -> Result<Vec<f64>> {
        let Some(label) = label else {
            return self.predict_noise(x_sigma, sigma, None);
        };
        let cond = self.predict_noise(x_sigma, sigma, Some(label))?;
        if guidance == 1.0 {
            return Ok(cond);
        }
        let uncond = self.predict_noise(x_sigma, sigma, None)?;
        Ok(uncond
            .iter()
            .zip(&cond)
            .map(|(u, c)| u + guidance * (c - u))
            .collect())
    }
}

/// Train a denoiser with DP-SGD on the K-term loss.
pub fn diffusion_train(
    data: &Dataset,
    dp: &DpSgdConfig,
    cfg: &DiffusionConfig,
    plan: &RngPlan,
) -> Result<(DiffusionModel, StepTrace)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    let mut model = DiffusionModel::init(
        cfg,
        data.dim(),
        data.n_classes(),
        plan.stream_seed(Stream::ModelInit),
    )?;
    let objective = DiffusionObjective {
        data,
        loss: model.loss(),
        seed: plan.stream_seed(Stream::DataNoise),
    };
    let (net, trace) = train(&model.denoiser, &objective, dp, plan)?;
    model.denoiser = net;
    Ok((model, trace))
}

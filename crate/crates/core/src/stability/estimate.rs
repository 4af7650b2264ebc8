use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dp::{coupled_train_with, BatchPlan, DpSgdConfig, Objective};
use crate::error::{Error, Result};
use crate::models::{EdmConfig, EdmLoss, NoiseDraw};
use crate::nn::Network;
use crate::rng::{derive_seed, rng_from_seed, RngPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEstimate {
    /// Largest loss gap over every replica, removed index and probe.
    pub beta_sup: f64,
    /// Largest replica-averaged loss gap over (probe, removed index).
    pub beta_mean: f64,
    pub probes: usize,
    pub removed: Vec<usize>,
    pub replicas: usize,
}

/// Coupled-run stability estimate.
///
/// For every removed index `i` and replica `r`, trains `D` and `D \ {i}` in
/// lockstep from `net` (replica `r` uses `plan.child(r)`) and compares the
/// two models on each probe through `probe_loss(model, probe)`.
pub fn estimate_beta<O, P>(
    net: &Network,
    objective: &O,
    removed: &[usize],
    n_probes: usize,
    probe_loss: P,
    replicas: usize,
    cfg: &DpSgdConfig,
    plan: &RngPlan,
) -> Result<StabilityEstimate>
where
    O: Objective + ?Sized,
    P: Fn(&Network, usize) -> Result<f64>,
{
    estimate_beta_with(
        net,
        objective,
        removed,
        n_probes,
        probe_loss,
        replicas,
        cfg,
        plan,
        |_, _| BatchPlan::Random,
    )
}

/// [`estimate_beta`] with a batch plan chosen per (removed index, replica).
#[allow(clippy::too_many_arguments)]
pub fn estimate_beta_with<O, P, B>(
    net: &Network,
    objective: &O,
    removed: &[usize],
    n_probes: usize,
    probe_loss: P,
    replicas: usize,
    cfg: &DpSgdConfig,
    plan: &RngPlan,
    batches: B,
) -> Result<StabilityEstimate>
where
    O: Objective + ?Sized,
    P: Fn(&Network, usize) -> Result<f64>,
    B: Fn(usize, usize) -> BatchPlan,
{
    if removed.is_empty() || n_probes == 0 || replicas == 0 {
        return Err(Error::InvalidArgument(
            "stability estimation needs removed indices, probes and replicas".into(),
        ));
    }
    let mut sums = vec![0.0; removed.len() * n_probes];
    let mut beta_sup = 0.0f64;
    for r in 0..replicas {
        let rplan = plan.child(r as u64);
        for (k, &i) in removed.iter().enumerate() {
            let run = coupled_train_with(net, objective, i, cfg, &rplan, batches(i, r))?;
            for z in 0..n_probes {
                let gap = (probe_loss(&run.full, z)? - probe_loss(&run.reduced, z)?).abs();
                if !gap.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss gap at probe {z}")));
                }
                beta_sup = beta_sup.max(gap);
                sums[k * n_probes + z] += gap;
            }
        }
    }
    let beta_mean = sums.iter().fold(0.0f64, |a, &s| a.max(s / replicas as f64));
    Ok(StabilityEstimate {
        beta_sup,
        beta_mean,
        probes: n_probes,
        removed: removed.to_vec(),
        replicas,
    })
}

/// `count` distinct indices drawn uniformly, plus the index with the largest
/// gradient norm at `net` when it is not already among them.
pub fn select_removed<O: Objective + ?Sized>(
    objective: &O,
    net: &Network,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let m = objective.len();
    if m == 0 {
        return Err(Error::InvalidArgument("empty objective".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = sample_indices(&mut rng, m, count.min(m)).into_vec();
    out.sort_unstable();
    let mut grad = vec![0.0; net.num_params()];
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..m {
        grad.iter_mut().for_each(|g| *g = 0.0);
        objective.accumulate_grad(net, i, 0, &mut grad)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>();
        if norm > best.1 {
            best = (i, norm);
        }
    }
    if !out.contains(&best.0) {
        out.push(best.0);
    }
    Ok(out)
}

/// An empirical maximum together with the number of evaluations behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub samples: usize,
}

/// Empirical lower estimate of the loss's parameter-Lipschitz constant:
/// the largest `|ℓ(θ+δ, z) − ℓ(θ, z)|/‖δ‖` over parameter points, probes and
/// `directions` random directions of norm `scale`.
pub fn estimate_lipschitz<P>(
    points: &[Network],
    n_probes: usize,
    loss: P,
    directions: usize,
    scale: f64,
    seed: u64,
) -> Result<Estimate>
where
    P: Fn(&Network, usize) -> Result<f64>,
{
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "perturbation scale must be positive, got {scale}"
        )));
    }
    let mut best = 0.0f64;
    let mut samples = 0;
    for (p, point) in points.iter().enumerate() {
        let base: Vec<f64> = (0..n_probes)
            .map(|z| loss(point, z))
            .collect::<Result<_>>()?;
        let mut rng = rng_from_seed(derive_seed(seed, &[p as u64]));
        let mut moved = point.clone();
        for _ in 0..directions {
            let mut dir: Vec<f64> = (0..point.num_params())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            dir.iter_mut().for_each(|v| *v *= scale / norm);
            for ((m, &o), d) in moved.params_mut().iter_mut().zip(point.params()).zip(&dir) {
                *m = o + d;
            }
            for (z, &b) in base.iter().enumerate() {
                let ratio = (loss(&moved, z)? - b).abs() / scale;
                if !ratio.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss difference at probe {z}"
                    )));
                }
                best = best.max(ratio);
                samples += 1;
            }
        }
    }
    Ok(Estimate {
        value: best,
        samples,
    })
}

/// Largest residual norm `‖ε̂ − ε‖` over the given probe draws.
///
/// `predict(point, x_σ, σ)` returns the noise prediction for data point
/// `point`.
pub fn estimate_residual_bound<P>(
    loss: &EdmLoss,
    points: &[&[f64]],
    draws: &[NoiseDraw],
    mut predict: P,
) -> Result<Estimate>
where
    P: FnMut(usize, &[f64], f64) -> Result<Vec<f64>>,
{
    if points.is_empty() || draws.is_empty() {
        return Err(Error::InvalidArgument(
            "residual bound needs probe points and draws".into(),
        ));
    }
    let mut best = 0.0f64;
    for (p, x) in points.iter().enumerate() {
        let res = loss.residuals_with(|xs, s| predict(p, xs, s), x, draws)?;
        for r in res {
            best = best.max(r.sqrt());
        }
    }
    Ok(Estimate {
        value: best,
        samples: points.len() * draws.len(),
    })
}

/// Fewest scores [`estimate_density_bound`] accepts.
pub const MIN_DENSITY_SCORES: usize = 100;

/// Histogram-based density bound for a score distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    /// `None` when the scores have no usable spread (a point mass).
    pub q: Option<f64>,
    pub bin_width: f64,
    pub bins: usize,
    pub samples: usize,
}

impl DensityEstimate {
    pub fn is_unbounded(&self) -> bool {
        self.q.is_none()
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Max bin density of a Freedman–Diaconis histogram whose range is widened
/// by one bin on each side.
pub fn estimate_density_bound(scores: &[f64]) -> Result<DensityEstimate> {
    if scores.len() < MIN_DENSITY_SCORES {
        return Err(Error::InvalidArgument(format!(
            "density estimation needs at least {MIN_DENSITY_SCORES} scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let width = 2.0 * iqr / (n as f64).cbrt();
    if !(width > 0.0) {
        return Ok(DensityEstimate {
            q: None,
            bin_width: 0.0,
            bins: 0,
            samples: n,
        });
    }
    let lo = sorted[0] - width;
    let bins = ((sorted[n - 1] + width - lo) / width).ceil() as usize + 1;
    let mut counts = vec![0usize; bins];
    for s in &sorted {
        let b = (((s - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let peak = *counts.iter().max().expect("at least one bin");
    Ok(DensityEstimate {
        q: Some(peak as f64 / (n as f64 * width)),
        bin_width: width,
        bins,
        samples: n,
    })
}

/// `(1/K) Σ λ(σ_k)` over the given draws.
pub fn lambda_bar(cfg: &EdmConfig, sigmas: &[f64]) -> Result<f64> {
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("λ̄ needs at least one σ".into()));
    }
    let mut total = 0.0;
    for &s in sigmas {
        total += crate::models::edm_weight(s, cfg.sigma_data)?;
    }
    Ok(total / sigmas.len() as f64)
}

/// `E[λ(σ)]` under the clamped log-normal σ distribution, by Simpson
/// quadrature over the standard-normal variable.
pub fn lambda_bar_expected(cfg: &EdmConfig) -> Result<f64> {
    cfg.validate()?;
    let (a, b, n) = (-12.0f64, 12.0f64, 24_000usize);
    let h = (b - a) / n as f64;
    let f = |g: f64| -> Result<f64> {
        let sigma = ((cfg.p_mean + cfg.p_std * g).exp() * cfg.sigma_data)
            .clamp(cfg.sigma_min, cfg.sigma_max);
        let density = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
        Ok(crate::models::edm_weight(sigma, cfg.sigma_data)? * density)
    };
    let mut total = f(a)? + f(b)?;
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        total += w * f(a + k as f64 * h)?;
    }
    Ok(total * h / 3.0)
}

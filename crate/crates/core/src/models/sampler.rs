use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::diffusion::DiffusionModel;
use crate::nn::Tensor;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub rho: f64,
    pub guidance: f64,
    /// Clamp each denoised estimate `D(x, t)` to `[-c, c]`. Each Euler step
    /// is then a convex combination of the state and a bounded point, so a
    /// badly fitted (e.g. heavily noised) denoiser cannot make the sampler
    /// diverge.
    pub clip_denoised: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            t_min: 0.002,
            t_max: 80.0,
            rho: 7.0,
            guidance: 3.0,
            clip_denoised: Some(1.0),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < t_min < t_max, got ({}, {})",
                self.t_min, self.t_max
            )));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !self.guidance.is_finite() {
            return Err(Error::Config("guidance scale must be finite".into()));
        }
        if let Some(c) = self.clip_denoised {
            if !(c > 0.0) {
                return Err(Error::Config(format!(
                    "clip_denoised must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Decreasing noise levels from `t_max` to `t_min`, evenly spaced in `t^{1/ρ}`.
pub fn time_grid(cfg: &SamplerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.steps;
    if n == 1 {
        return Ok(vec![cfg.t_max]);
    }
    let (hi, lo) = (cfg.t_max.powf(1.0 / cfg.rho), cfg.t_min.powf(1.0 / cfg.rho));
    let mut grid: Vec<f64> = (0..n)
        .map(|i| (hi + (i as f64 / (n - 1) as f64) * (lo - hi)).powf(cfg.rho))
        .collect();
    grid[0] = cfg.t_max;
    grid[n - 1] = cfg.t_min;
    Ok(grid)
}

/// Euler integration of `dx/dt = (x − D(x, t))/t` along `grid`, where `D` is
/// a clean-sample estimator. A single-point grid returns `D(x, t₀)`.
pub fn euler_sample<D>(mut x: Vec<f64>, grid: &[f64], mut denoise: D) -> Result<Vec<f64>>
where
    D: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    match grid {
        [] => return Err(Error::InvalidArgument("empty time grid".into())),
        [t] => return denoise(&x, *t),
        _ => {}
    }
    for (i, pair) in grid.windows(2).enumerate() {
        let (t, next) = (pair[0], pair[1]);
        let mut step = || -> Result<()> {
            let x0 = denoise(&x, t)?;
            for (v, d) in x.iter_mut().zip(&x0) {
                *v += (next - t) * (*v - d) / t;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("sampler state became non-finite".into()));
            }
            Ok(())
        };
        step().map_err(|e| e.at_step(i))?;
    }
    Ok(x)
}

/// Draw `n` samples with classifier-free guidance; sample `i` uses its own
/// rng derived from `(seed, i)`.
pub fn diffusion_sample(
    model: &DiffusionModel,
    cfg: &SamplerConfig,
    label: Option<usize>,
    n: usize,
    seed: u64,
) -> Result<Tensor> {
    let grid = time_grid(cfg)?;
    let mut out = Vec::with_capacity(n * model.data_dim);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
        let x: Vec<f64> = (0..model.data_dim)
            .map(|_| grid[0] * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let sample = euler_sample(x, &grid, |x, t| {
            let eps = model.predict_noise_guided(x, t, label, cfg.guidance)?;
            Ok(x.iter()
                .zip(&eps)
                .map(|(v, e)| {
                    let d = v - t * e;
                    match cfg.clip_denoised {
                        Some(c) => d.clamp(-c, c),
                        None => d,
                    }
                })
                .collect())
        })?;
        out.extend(sample);
    }
    Tensor::matrix(n, model.data_dim, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::diffusion::DiffusionConfig;

    #[test]
    fn two_point_grid_is_the_endpoints() {
        let cfg = SamplerConfig {
            steps: 2,
            ..SamplerConfig::default()
        };
        assert_eq!(time_grid(&cfg).unwrap(), vec![80.0, 0.002]);
    }

    #[test]
    fn grid_is_strictly_decreasing_with_exact_ends() {
        for steps in [3, 10, 150, 1000] {
            let g = time_grid(&SamplerConfig {
                steps,
                ..SamplerConfig::default()
            })
            .unwrap();
            assert_eq!(g.len(), steps);
            assert_eq!((g[0], g[steps - 1]), (80.0, 0.002));
            assert!(g.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            SamplerConfig {
                steps: 0,
                ..SamplerConfig::default()
            },
            SamplerConfig {
                t_min: 0.0,
                ..SamplerConfig::default()
            },
            SamplerConfig {
                t_min: 90.0,
                ..SamplerConfig::default()
            },
            SamplerConfig {
                rho: 0.0,
                ..SamplerConfig::default()
            },
        ] {
            assert!(time_grid(&bad).is_err());
        }
    }

    #[test]
    fn zero_clean_estimate_contracts_to_zero() {
        // x_{i+1} = x_i · t_{i+1}/t_i, so the product telescopes to t_min/t_max.
        let grid = time_grid(&SamplerConfig::default()).unwrap();
        let start = vec![80.0, -40.0, 3.0];
        let end = euler_sample(start.clone(), &grid, |x, _| Ok(vec![0.0; x.len()])).unwrap();
        for (s, e) in start.iter().zip(&end) {
            let want = s * 0.002 / 80.0;
            assert!((e - want).abs() <= 1e-9 * s.abs());
        }
        assert!(end.iter().all(|v| v.abs() < 0.01));
    }

    #[test]
    fn non_finite_state_reports_step() {
        let grid = time_grid(&SamplerConfig {
            steps: 5,
            ..SamplerConfig::default()
        })
        .unwrap();
        let mut calls = 0;
        let err = euler_sample(vec![1.0], &grid, |_, _| {
            calls += 1;
            Ok(vec![if calls == 3 { f64::INFINITY } else { 0.0 }])
        })
        .unwrap_err();
        assert!(matches!(err, Error::Training { step: 2, .. }), "{err:?}");
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let cfg = DiffusionConfig {
            hidden: vec![8],
            ..DiffusionConfig::default()
        };
        let model = DiffusionModel::init(&cfg, 4, 3, 7).unwrap();
        let sc = SamplerConfig {
            steps: 12,
            ..SamplerConfig::default()
        };
        let a = diffusion_sample(&model, &sc, Some(1), 3, 42).unwrap();
        let b = diffusion_sample(&model, &sc, Some(1), 3, 42).unwrap();
        assert_eq!(a.shape(), &[3, 4]);
        assert_eq!(a, b);
        assert_ne!(a, diffusion_sample(&model, &sc, Some(1), 3, 43).unwrap());
    }

    #[test]
    fn clipped_denoiser_keeps_a_wild_model_bounded() {
        let cfg = DiffusionConfig {
            hidden: vec![32, 32],
            ..DiffusionConfig::default()
        };
        let mut model = DiffusionModel::init(&cfg, 6, 2, 3).unwrap();
        let mut rng = rng_from_seed(9);
        for p in model.denoiser.params_mut() {
            *p += 5.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        }
        let sc = SamplerConfig::default();
        let clipped = diffusion_sample(&model, &sc, Some(0), 4, 1).unwrap();
        // |x'| − 1 ≤ (t'/t)(|x| − 1) at every step, and |x₀| < 8·t_max here.
        let slack = sc.t_min / sc.t_max * 8.0 * sc.t_max;
        assert!(
            clipped.data().iter().all(|v| v.abs() <= 1.0 + slack),
            "{clipped:?}"
        );

        let raw = SamplerConfig {
            clip_denoised: None,
            ..SamplerConfig::default()
        };
        assert!(diffusion_sample(&model, &raw, Some(0), 4, 1).is_err());
    }

    #[test]
    fn unit_guidance_is_the_conditional_prediction() {
        let cfg = DiffusionConfig {
            hidden: vec![8],
            ..DiffusionConfig::default()
        };
        let model = DiffusionModel::init(&cfg, 3, 2, 1).unwrap();
        let x = [0.2, 0.1, -0.4];
        assert_eq!(
            model.predict_noise_guided(&x, 0.7, Some(1), 1.0).unwrap(),
            model.predict_noise(&x, 0.7, Some(1)).unwrap()
        );
        let u = model.predict_noise(&x, 0.7, None).unwrap();
        let c = model.predict_noise(&x, 0.7, Some(1)).unwrap();
        let g = model.predict_noise_guided(&x, 0.7, Some(1), 3.0).unwrap();
        for i in 0..3 {
            assert!((g[i] - (u[i] + 3.0 * (c[i] - u[i]))).abs() < 1e-15);
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How mini-batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Consecutive slices of fresh random permutations; constant batch size.
    #[default]
    WithoutReplacement,
    /// Each example independently with probability b/m.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl LearningRate {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            LearningRate::Constant(a) => *a,
            LearningRate::Schedule(s) => s[step],
        }
    }

    /// `Σ_{t<steps} α_t`.
    pub fn sum(&self, steps: usize) -> f64 {
        match self {
            LearningRate::Constant(a) => a * steps as f64,
            LearningRate::Schedule(s) => s[..steps].iter().sum(),
        }
    }

    pub fn values(&self, steps: usize) -> Vec<f64> {
        (0..steps).map(|t| self.at(t)).collect()
    }
}

/// DP-SGD hyperparameters.
///
/// Noise convention: the mean of the clipped per-sample gradients receives
/// Gaussian noise with per-coordinate standard deviation `σ·C/b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    /// `None` disables clipping; only allowed for non-private runs.
    pub clip_norm: Option<f64>,
    pub noise_multiplier: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: LearningRate,
    #[serde(default)]
    pub sampling: Sampling,
}

impl DpSgdConfig {
    pub fn new(
        clip_norm: f64,
        noise_multiplier: f64,
        batch_size: usize,
        steps: usize,
        lr: f64,
    ) -> Self {
        Self {
            clip_norm: Some(clip_norm),
            noise_multiplier,
            batch_size,
            steps,
            learning_rate: LearningRate::Constant(lr),
            sampling: Sampling::WithoutReplacement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "clip norm must be positive, got {c}"
                )));
            }
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "noise multiplier must be finite and non-negative, got {}",
                self.noise_multiplier
            )));
        }
        if self.noise_multiplier > 0.0 && self.clip_norm.is_none() {
            return Err(Error::Config(
                "noise without clipping has no calibrated sensitivity".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        match &self.learning_rate {
            LearningRate::Constant(a) if !(*a > 0.0) => {
                return Err(Error::Config(format!(
                    "learning rate must be positive, got {a}"
                )))
            }
            LearningRate::Schedule(s) => {
                if s.len() < self.steps {
                    return Err(Error::Config(format!(
                        "schedule has {} rates for {} steps",
                        s.len(),
                        self.steps
                    )));
                }
                if s.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::Config("schedule rates must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-coordinate noise standard deviation on the averaged gradient.
    pub fn noise_std(&self) -> f64 {
        match self.clip_norm {
            Some(c) => self.noise_multiplier * c / self.batch_size as f64,
            None => 0.0,
        }
    }

    /// Sampling rate `q = b/m` used by the accountant.
    pub fn sampling_rate(&self, dataset_size: usize) -> f64 {
        (self.batch_size as f64 / dataset_size as f64).min(1.0)
    }
}

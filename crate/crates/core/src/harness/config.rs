use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_noise, epsilon as account, MechanismSpec};
use crate::data::DatasetSource;
use crate::dp::{DpSgdConfig, LearningRate, Sampling};
use crate::error::{Error, Result};
use crate::mia::{AttackKind, SplitFractions, DIFFUSION_PROBES};
use crate::models::{DiffusionConfig, EdmConfig, GanConfig, GanRegime, ModelFamily, SamplerConfig};
use crate::nn::Activation;
use crate::rng::fnv1a;

/// The privacy levels of the standard sweep.
pub const EPSILON_GRID: [f64; 4] = [f64::INFINITY, 10.0, 5.0, 1.0];

pub const DEFAULT_DELTA: f64 = 1e-5;

/// Formats ε the way configs and reports spell it.
pub fn format_epsilon(eps: f64) -> String {
    if eps.is_infinite() {
        "inf".into()
    } else {
        format!("{eps}")
    }
}

pub fn parse_epsilon(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        other => other
            .parse()
            .map_err(|_| Error::Config(format!("bad epsilon `{s}`"))),
    }
}

/// DP-SGD settings without the noise multiplier, which is calibrated from ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Ignored when `epochs` is set.
    #[serde(default)]
    pub steps: usize,
    /// Passes over the member set; steps become `⌈epochs·m/b⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<f64>,
    pub learning_rate: LearningRate,
    #[serde(default)]
    pub sampling: Sampling,
}

impl TrainingConfig {
    pub fn steps_for(&self, members: usize) -> usize {
        match self.epochs {
            Some(e) => (e * members as f64 / self.batch_size as f64).ceil() as usize,
            None => self.steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    /// Fractions of one half of the data.
    pub members: f64,
    pub nonmembers: f64,
}

impl SplitConfig {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            members: self.members,
            nonmembers: self.nonmembers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityConfig {
    pub enabled: bool,
    /// Generated samples compared against the real data.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub enabled: bool,
    /// Uniformly drawn removed indices; the largest-gradient index is added.
    pub removed: usize,
    pub replicas: usize,
    pub probes: usize,
    pub lipschitz_directions: usize,
    pub perturbation: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            removed: 8,
            replicas: 2,
            probes: 64,
            lipschitz_directions: 8,
            perturbation: 1e-4,
        }
    }
}

/// One cell of the experiment grid: a family, a privacy level and
/// everything needed to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: ModelFamily,
    #[serde(with = "crate::serde_inf")]
    pub epsilon: f64,
    pub delta: f64,
    /// Master seed for training streams, probes and sampling.
    pub seed: u64,
    pub data: DatasetSource,
    pub training: TrainingConfig,
    pub split: SplitConfig,
    pub shadows: usize,
    pub attack: AttackKind,
    /// Fixed diffusion probes per attack.
    pub probes: usize,
    pub gan: GanConfig,
    pub diffusion: DiffusionConfig,
    pub sampler: SamplerConfig,
    pub quality: QualityConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
}

impl ExperimentConfig {
    /// Full-scale defaults: MNIST IDX files, batch 128, rate 3e-4, 300
    /// epochs, K = 32, 20 shadows.
    pub fn full(family: ModelFamily, epsilon: f64) -> Self {
        Self {
            family,
            epsilon,
            delta: DEFAULT_DELTA,
            seed: 0,
            data: DatasetSource::IdxFiles {
                images: "data/train-images-idx3-ubyte".into(),
                labels: "data/train-labels-idx1-ubyte".into(),
            },
            training: TrainingConfig {
                clip_norm: 1.0,
                batch_size: 128,
                steps: 0,
                epochs: Some(300.0),
                learning_rate: LearningRate::Constant(3e-4),
                sampling: Sampling::WithoutReplacement,
            },
            split: SplitConfig {
                seed: 0,
                members: 0.5,
                nonmembers: 0.5,
            },
            shadows: 20,
            attack: AttackKind::Threshold,
            probes: DIFFUSION_PROBES,
            gan: GanConfig::default(),
            diffusion: DiffusionConfig::default(),
            sampler: SamplerConfig::default(),
            quality: QualityConfig {
                enabled: true,
                samples: 10_000,
            },
            stability: StabilityConfig::default(),
        }
    }

    /// Laptop-scale overrides: 2,000 synthetic 8×8 digits, 64-member
    /// targets trained long enough to overfit, small MLPs, K = 2.
    pub fn desk(family: ModelFamily, epsilon: f64) -> Self {
        Self {
            seed: 100,
            data: DatasetSource::SyntheticDigits8x8 { n: 2000, seed: 1 },
            training: TrainingConfig {
                clip_norm: 1.0,
                batch_size: 32,
                steps: 800,
                epochs: None,
                learning_rate: LearningRate::Constant(0.3),
                sampling: Sampling::WithoutReplacement,
            },
            split: SplitConfig {
                seed: 0,
                members: 0.064,
                nonmembers: 0.9,
            },
            gan: GanConfig {
                latent_dim: 16,
                gen_hidden: vec![64],
                disc_hidden: vec![64, 64],
                regime: GanRegime::Fixed { n_d: 5 },
                gen_learning_rate: 0.05,
                gen_batch_size: 32,
            },
            diffusion: DiffusionConfig {
                edm: EdmConfig {
                    noise_multiplicity: 2,
                    ..EdmConfig::default()
                },
                hidden: vec![64, 64],
                activation: Activation::Relu,
            },
            quality: QualityConfig {
                enabled: true,
                samples: 500,
            },
            ..Self::full(family, epsilon)
        }
    }

    pub fn preset(name: &str, family: ModelFamily, epsilon: f64) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(family, epsilon)),
            "desk" => Ok(Self::desk(family, epsilon)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected full or desk)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.epsilon.is_nan() {
            return Err(Error::Config(format!(
                "ε must be positive or inf, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "δ must lie in (0, 1), got {}",
                self.delta
            )));
        }
        let t = &self.training;
        if !(t.clip_norm > 0.0 && t.clip_norm.is_finite()) {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {}",
                t.clip_norm
            )));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(e) = t.epochs {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("epochs must be positive, got {e}")));
            }
        }
        if self.shadows == 0 {
            return Err(Error::Config("need at least one shadow model".into()));
        }
        if self.probes == 0 {
            return Err(Error::Config("need at least one diffusion probe".into()));
        }
        if self.quality.enabled && self.quality.samples < 2 {
            return Err(Error::Config(
                "the quality proxy needs at least 2 samples".into(),
            ));
        }
        if self.stability.enabled && (self.stability.replicas == 0 || self.stability.probes == 0) {
            return Err(Error::Config(
                "stability pass needs replicas and probes".into(),
            ));
        }
        self.gan.regime.validate()?;
        self.diffusion.edm.validate()?;
        self.sampler.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// 64-bit FNV-1a of the canonical JSON encoding, as hex.
    pub fn hash(&self) -> Result<String> {
        Ok(format!(
            "{:016x}",
            fnv1a(serde_json::to_string(self)?.as_bytes())
        ))
    }

    /// Noise calibration for a member set of size `members`.
    pub fn dp_config(&self, members: usize) -> Result<(DpSgdConfig, AccountantRecord)> {
        if members == 0 {
            return Err(Error::Config("empty member set".into()));
        }
        let t = &self.training;
        let steps = t.steps_for(members);
        let q = (t.batch_size as f64 / members as f64).min(1.0);
        let sigma = if self.epsilon.is_infinite() {
            0.0
        } else {
            calibrate_noise(self.epsilon, self.delta, q, steps)?
        };
        let achieved = account(&MechanismSpec {
            noise_multiplier: sigma,
            sampling_rate: q,
            steps,
            delta: self.delta,
        })?;
        let dp = DpSgdConfig {
            clip_norm: Some(t.clip_norm),
            noise_multiplier: sigma,
            batch_size: t.batch_size,
            steps,
            learning_rate: t.learning_rate.clone(),
            sampling: t.sampling,
        };
        dp.validate()?;
        Ok((
            dp,
            AccountantRecord {
                target_epsilon: self.epsilon,
                achieved_epsilon: achieved.epsilon,
                delta: self.delta,
                noise_multiplier: sigma,
                sampling_rate: q,
                steps,
            },
        ))
    }
}

/// What the accountant decided for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountantRecord {
    #[serde(with = "crate::serde_inf")]
    pub target_epsilon: f64,
    #[serde(with = "crate::serde_inf")]
    pub achieved_epsilon: f64,
    pub delta: f64,
    /// `0` is the non-private sentinel.
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for family in [ModelFamily::Gan, ModelFamily::Diffusion] {
            for eps in EPSILON_GRID {
                for cfg in [
                    ExperimentConfig::full(family, eps),
                    ExperimentConfig::desk(family, eps),
                ] {
                    cfg.validate().unwrap();
                    let text = cfg.to_toml().unwrap();
                    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
                }
            }
        }
        let text = ExperimentConfig::desk(ModelFamily::Gan, f64::INFINITY)
            .to_toml()
            .unwrap();
        assert!(text.contains("epsilon = \"inf\""));
    }

    #[test]
    fn full_scale_defaults() {
        let cfg = ExperimentConfig::full(ModelFamily::Diffusion, 10.0);
        assert_eq!(cfg.delta, 1e-5);
        assert_eq!(cfg.training.batch_size, 128);
        assert_eq!(cfg.training.learning_rate, LearningRate::Constant(3e-4));
        assert_eq!(cfg.diffusion.edm.noise_multiplicity, 32);
        assert_eq!(cfg.diffusion.edm.label_dropout, 0.1);
        assert_eq!(cfg.shadows, 20);
        assert_eq!(cfg.sampler, SamplerConfig::default());
        assert_eq!(cfg.training.steps_for(30_000), 70_313);
    }

    #[test]
    fn infinite_epsilon_is_the_sentinel() {
        let (dp, acc) = ExperimentConfig::desk(ModelFamily::Gan, f64::INFINITY)
            .dp_config(64)
            .unwrap();
        assert_eq!(dp.noise_multiplier, 0.0);
        assert_eq!(dp.clip_norm, Some(1.0));
        assert!(acc.achieved_epsilon.is_infinite());
        let json = serde_json::to_string(&acc).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(
            serde_json::from_str::<AccountantRecord>(&json).unwrap(),
            acc
        );
    }

    #[test]
    fn finite_epsilon_is_met() {
        let (dp, acc) = ExperimentConfig::desk(ModelFamily::Diffusion, 5.0)
            .dp_config(64)
            .unwrap();
        assert!(dp.noise_multiplier > 0.0);
        assert!(acc.achieved_epsilon <= 5.0 + 1e-9);
        assert!(acc.achieved_epsilon > 4.9);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::desk(ModelFamily::Gan, 1.0);
        cfg.epsilon = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk(ModelFamily::Gan, 1.0);
        cfg.shadows = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("family = \"vae\"").is_err());
        assert!(ExperimentConfig::preset("huge", ModelFamily::Gan, 1.0).is_err());
        assert_eq!(parse_epsilon("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_epsilon("10").unwrap(), 10.0);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::desk(ModelFamily::Gan, 1.0);
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}

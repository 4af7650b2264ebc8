use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{draw_noise, DiffusionModel, EdmConfig, GanModel, NoiseDraw};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    GanLogit,
    DiffusionLoss,
}

impl ScoreKind {
    /// Sign that makes larger values more member-like: members get high
    /// discriminator logits but low denoising losses.
    pub fn orientation(self) -> f64 {
        match self {
            ScoreKind::GanLogit => 1.0,
            ScoreKind::DiffusionLoss => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    Target,
    Shadow(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: usize,
    pub model: ModelId,
    pub kind: ScoreKind,
    pub score: f64,
    pub member: bool,
}

impl ScoreRecord {
    pub fn oriented(&self) -> f64 {
        self.kind.orientation() * self.score
    }
}

pub fn write_scores(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ScoreRecord = serde_json::from_str(&line)?;
        if !r.score.is_finite() {
            return Err(Error::Format(format!(
                "non-finite score for sample {}",
                r.sample_id
            )));
        }
        out.push(r);
    }
    Ok(out)
}

/// The discriminator's raw logit.
pub fn extract_score_gan(model: &GanModel, x: &[f64], label: usize) -> Result<f64> {
    model.logit(x, label)
}

/// Fixed `(σ_j, ε_j)` probes drawn from the training σ-distribution.
pub fn diffusion_probes(edm: &EdmConfig, dim: usize, count: usize, seed: u64) -> Vec<NoiseDraw> {
    draw_noise(edm, dim, count, &mut rng_from_seed(seed))
}

/// Unweighted mean denoising error over the probe set.
pub fn extract_score_diffusion(
    model: &DiffusionModel,
    x: &[f64],
    label: usize,
    probes: &[NoiseDraw],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("empty probe set".into()));
    }
    model.loss().score(&model.denoiser, x, Some(label), probes)
}

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{format_epsilon, ExperimentConfig, EPSILON_GRID};
use crate::harness::run::{execute, RunManifest};
use crate::models::ModelFamily;

/// A family × ε × seed sweep around a base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub base: ExperimentConfig,
    pub families: Vec<ModelFamily>,
    #[serde(with = "eps_list")]
    pub epsilons: Vec<f64>,
    pub seeds: usize,
    /// Leave out the non-private GAN cell, which the published table marks
    /// as not reported.
    pub skip_nonprivate_gan: bool,
}

mod eps_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::harness::config::{format_epsilon, parse_epsilon};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|&e| format_epsilon(e))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|e| parse_epsilon(e).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// One grid cell: its config and the directory name its artifacts go to.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub name: String,
    pub replicate: usize,
    pub config: ExperimentConfig,
}

impl GridSpec {
    /// Both families over ε ∈ {∞, 10, 5, 1}.
    pub fn standard(base: ExperimentConfig, seeds: usize) -> Self {
        Self {
            base,
            families: vec![ModelFamily::Gan, ModelFamily::Diffusion],
            epsilons: EPSILON_GRID.to_vec(),
            seeds,
            skip_nonprivate_gan: false,
        }
    }

    /// Replicate `r` shifts both the master seed and the split seed by `r`,
    /// so every replicate draws fresh splits, initializations and noise.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &epsilon in &self.epsilons {
                if self.skip_nonprivate_gan && family == ModelFamily::Gan && epsilon.is_infinite() {
                    continue;
                }
                for r in 0..self.seeds {
                    let mut config = self.base.clone();
                    config.family = family;
                    config.epsilon = epsilon;
                    config.seed = self.base.seed.wrapping_add(r as u64);
                    config.split.seed = self.base.split.seed.wrapping_add(r as u64);
                    out.push(GridCell {
                        name: format!("{family}-eps{}-seed{r}", format_epsilon(epsilon)),
                        replicate: r,
                        config,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.families.is_empty() || self.epsilons.is_empty() {
            return Err(Error::Config(
                "grid needs at least one family, ε and seed".into(),
            ));
        }
        self.base.validate()
    }
}

/// Runs every cell, in parallel across cells, returning manifests in cell
/// order. With `out_dir`, each cell persists into its own subdirectory.
pub fn run_grid(spec: &GridSpec, out_dir: Option<&Path>) -> Result<Vec<RunManifest>> {
    spec.validate()?;
    spec.cells()
        .par_iter()
        .map(|cell| {
            let dir = out_dir.map(|d| d.join(&cell.name));
            execute(&cell.config, dir.as_deref()).map(|o| o.manifest)
        })
        .collect()
}

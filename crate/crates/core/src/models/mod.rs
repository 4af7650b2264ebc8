//! Generative models trained under DP-SGD: a class-conditional GAN whose
//! discriminator is the only private component, and an EDM-style diffusion
//! model with the K-term noise-multiplicity loss.

mod diffusion;
mod gan;
mod io;
mod sampler;

pub use diffusion::{
    denoiser_input, diffusion_train, draw_noise, edm_loss, edm_weight, sample_sigma,
    DiffusionConfig, DiffusionModel, DiffusionObjective, EdmConfig, EdmLoss, NoiseDraw,
};
pub use gan::{
    conditioned, disc_pair_loss_grad, gan_disc_loss, gan_gen_loss, gan_train, GanConfig,
    GanDiscObjective, GanModel, GanRegime, GanRun, GenLoss, UpdateController,
};
pub use io::{
    load_model, load_tensor, save_model, save_tensor, write_sample_grid, ModelCheckpoint,
    MODEL_FORMAT,
};
pub use sampler::{diffusion_sample, euler_sample, time_grid, SamplerConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Gan,
    Diffusion,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Gan => "gan",
            ModelFamily::Diffusion => "diffusion",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "gan" => Ok(ModelFamily::Gan),
            "diffusion" | "dm" => Ok(ModelFamily::Diffusion),
            other => Err(Error::InvalidArgument(format!(
                "unknown model family `{other}`"
            ))),
        }
    }
}

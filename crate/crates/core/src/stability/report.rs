use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelFamily;
use crate::stability::bounds::{
    advantage_bound, bound_diffusion, bound_dpsgd, lipschitz_diffusion_constant,
    lipschitz_logit_constant, uncoupled_extra_term,
};
use crate::stability::estimate::StabilityEstimate;

/// Quantities the closed-form bounds are evaluated at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Parameter-Lipschitz constant of the per-sample loss.
    pub l: f64,
    pub c: f64,
    pub m: usize,
    /// `Σ_t α_t` over the private updates.
    pub alpha_sum: f64,
    pub steps: usize,
    /// Per-coordinate noise standard deviation on the averaged gradient.
    pub noise_std: f64,
    /// `(1/K) Σ λ(σ_k)`; diffusion only.
    pub lambda_bar: Option<f64>,
    /// Residual-norm bound; diffusion only.
    pub residual_bound: Option<f64>,
    /// Smallest loss weight; diffusion only.
    pub lambda_min: Option<f64>,
    /// Discriminator loss range `[a, b]`; GAN only.
    pub loss_range: Option<(f64, f64)>,
    /// Score density bound; `None` when the density is unbounded.
    pub q: Option<f64>,
}

impl BoundInputs {
    fn require(v: Option<f64>, name: &str, family: ModelFamily) -> Result<f64> {
        v.ok_or_else(|| Error::InvalidArgument(format!("{family} bounds need {name}")))
    }

    /// Mean step size, used by the random-walk diagnostic.
    pub fn mean_alpha(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.alpha_sum / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub family: ModelFamily,
    pub inputs: BoundInputs,
    pub beta_proof: f64,
    pub beta_stated: f64,
    pub score_lipschitz: f64,
    /// `2·Q·L_s·β_stated`; infinite when Q is unbounded.
    #[serde(with = "crate::serde_inf")]
    pub advantage_bound: f64,
    pub vacuous: bool,
    pub uncoupled_extra: f64,
    /// `β_Diff / β_GAN = 2λ̄B` at matched inputs; diffusion only.
    pub diffusion_gan_ratio: Option<f64>,
    pub empirical: Option<StabilityEstimate>,
}

impl BoundReport {
    pub fn compute(
        family: ModelFamily,
        inputs: BoundInputs,
        empirical: Option<StabilityEstimate>,
    ) -> Result<Self> {
        let base = bound_dpsgd(inputs.l, inputs.c, inputs.m, inputs.alpha_sum)?;
        let (beta_stated, score_lipschitz, ratio) = match family {
            ModelFamily::Gan => {
                let (a, b) = inputs.loss_range.ok_or_else(|| {
                    Error::InvalidArgument("gan bounds need the loss range [a, b]".into())
                })?;
                (base.stated, lipschitz_logit_constant(a, b)?, None)
            }
            ModelFamily::Diffusion => {
                let lb = BoundInputs::require(inputs.lambda_bar, "λ̄", family)?;
                let rb =
                    BoundInputs::require(inputs.residual_bound, "the residual bound B", family)?;
                let lm = BoundInputs::require(inputs.lambda_min, "λ_min", family)?;
                let beta = bound_diffusion(lb, inputs.l, rb, inputs.c, inputs.m, inputs.alpha_sum)?;
                (beta, lipschitz_diffusion_constant(lm)?, Some(2.0 * lb * rb))
            }
        };
        let (advantage, vacuous) = match inputs.q {
            Some(q) => {
                let a = advantage_bound(q, score_lipschitz, beta_stated)?;
                (a.bound, a.vacuous)
            }
            None => (f64::INFINITY, true),
        };
        let uncoupled_extra =
            uncoupled_extra_term(inputs.mean_alpha(), inputs.noise_std, inputs.steps)?;
        Ok(Self {
            family,
            beta_proof: beta_stated / 2.0,
            beta_stated,
            score_lipschitz,
            advantage_bound: advantage,
            vacuous,
            uncoupled_extra,
            diffusion_gan_ratio: ratio,
            empirical,
            inputs,
        })
    }

    /// `key,value` lines. β̂ and the bounds are expectation-form quantities.
    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(String::new, |x| format!("{x:e}"))
        }
        let i = &self.inputs;
        let mut out = String::from("key,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k},{v}");
        };
        row("family", self.family.to_string());
        row("form", "expectation".into());
        row("L", format!("{:e}", i.l));
        row("C", format!("{:e}", i.c));
        row("m", i.m.to_string());
        row("alpha_sum", format!("{:e}", i.alpha_sum));
        row("T", i.steps.to_string());
        row("noise_std", format!("{:e}", i.noise_std));
        row("lambda_bar", opt(i.lambda_bar));
        row("B", opt(i.residual_bound));
        row("lambda_min", opt(i.lambda_min));
        row("loss_a", opt(i.loss_range.map(|r| r.0)));
        row("loss_b", opt(i.loss_range.map(|r| r.1)));
        row(
            "Q",
            i.q.map_or_else(|| "unbounded".into(), |q| format!("{q:e}")),
        );
        row("beta_proof", format!("{:e}", self.beta_proof));
        row("beta_stated", format!("{:e}", self.beta_stated));
        row("L_s", format!("{:e}", self.score_lipschitz));
        row("advantage_bound", format!("{:e}", self.advantage_bound));
        row("vacuous", self.vacuous.to_string());
        row("uncoupled_extra", format!("{:e}", self.uncoupled_extra));
        row("diffusion_gan_ratio", opt(self.diffusion_gan_ratio));
        row(
            "beta_hat_sup",
            opt(self.empirical.as_ref().map(|e| e.beta_sup)),
        );
        row(
            "beta_hat_mean",
            opt(self.empirical.as_ref().map(|e| e.beta_mean)),
        );
        out
    }
}

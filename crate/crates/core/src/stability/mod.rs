//! Empirical stability of DP-SGD training, the closed-form stability and
//! advantage bounds, and estimators for the constants the bounds need.

mod bounds;
mod estimate;
mod report;

pub use bounds::{
    advantage_bound, bound_diffusion, bound_dpsgd, bound_gan, lipschitz_diffusion_constant,
    lipschitz_logit_constant, uncoupled_extra_term, AdvantageBound, DpsgdBound,
};
pub use estimate::{
    estimate_beta, estimate_beta_with, estimate_density_bound, estimate_lipschitz,
    estimate_residual_bound, lambda_bar, lambda_bar_expected, select_removed, DensityEstimate,
    Estimate, StabilityEstimate, MIN_DENSITY_SCORES,
};
pub use report::{BoundInputs, BoundReport};

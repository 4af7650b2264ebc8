//! Differentially private generative models, membership inference and the
//! uniform-stability bounds that tie them together.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: dense MLPs with exact per-sample gradients.
//! * [`dp`]: DP-SGD (clipping, Gaussian noise, coupled D / D\i runs).
//! * [`accountant`]: Rényi accountant for the subsampled Gaussian mechanism.
//! * [`models`]: DP-GAN and EDM-style DP diffusion on top of the optimizer.
//! * [`mia`]: shadow-model membership inference and attack metrics.
//! * [`stability`]: empirical stability, closed-form bounds and estimators.
//! * [`data`] and [`harness`]: datasets, experiments, manifests, reports.

// `!(x > 0.0)` deliberately rejects NaN too; index loops mirror the maths.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod accountant;
pub mod data;
pub mod dp;
pub mod error;
pub mod harness;
pub mod mia;
pub mod models;
pub mod nn;
pub mod rng;
mod serde_inf;
pub mod stability;

pub use error::{Error, ErrorClass, Result};
pub use nn::{Activation, MlpSpec, Network, Tensor};
pub use rng::RngPlan;

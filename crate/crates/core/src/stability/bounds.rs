use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be finite and non-negative, got {v}"
        )));
    }
    Ok(())
}

/// Both constants of the DP-SGD stability bound: the one the argument
/// actually yields (`LC/m·Σα`) and the stated one (`2LC/m·Σα`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpsgdBound {
    pub proof: f64,
    pub stated: f64,
}

pub fn bound_dpsgd(l: f64, c: f64, m: usize, alpha_sum: f64) -> Result<DpsgdBound> {
    check_positive("L", l)?;
    check_positive("C", c)?;
    check_positive("Σα", alpha_sum)?;
    if m == 0 {
        return Err(Error::InvalidArgument(
            "dataset size m must be positive".into(),
        ));
    }
    let proof = l * c / m as f64 * alpha_sum;
    Ok(DpsgdBound {
        proof,
        stated: 2.0 * proof,
    })
}

/// Discriminator stability; the same form as plain DP-SGD.
pub fn bound_gan(l: f64, c: f64, m: usize, alpha_sum: f64) -> Result<f64> {
    Ok(bound_dpsgd(l, c, m, alpha_sum)?.stated)
}

/// `4·λ̄·L·B·C/m·Σα` for the K-term EDM loss.
pub fn bound_diffusion(
    lambda_bar: f64,
    l: f64,
    b: f64,
    c: f64,
    m: usize,
    alpha_sum: f64,
) -> Result<f64> {
    check_positive("λ̄", lambda_bar)?;
    check_positive("B", b)?;
    Ok(2.0 * lambda_bar * b * bound_gan(l, c, m, alpha_sum)?)
}

/// `α·σ·√T`, an order-of-magnitude diagnostic for uncoupled runs.
pub fn uncoupled_extra_term(alpha: f64, sigma: f64, steps: usize) -> Result<f64> {
    check_positive("α", alpha)?;
    check_positive("σ", sigma)?;
    Ok(alpha * sigma * (steps as f64).sqrt())
}

/// `sup_{u∈[a,b]} e^u/(e^u − 1) = e^a/(e^a − 1)`: the Lipschitz constant of
/// the map from logistic loss back to logit.
pub fn lipschitz_logit_constant(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss lower bound a = {a} gives an infinite constant; need a > 0"
        )));
    }
    if !(b >= a) {
        return Err(Error::InvalidArgument(format!(
            "loss range [{a}, {b}] is empty"
        )));
    }
    // e^a/(e^a − 1) = 1/(1 − e^{−a}), written to stay accurate for small a
    Ok(1.0 / -(-a).exp_m1())
}

/// `1/λ_min` for the score/loss relation of the diffusion model.
pub fn lipschitz_diffusion_constant(lambda_min: f64) -> Result<f64> {
    if !(lambda_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "λ_min must be positive, got {lambda_min}"
        )));
    }
    Ok(1.0 / lambda_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBound {
    pub bound: f64,
    /// The bound carries no information (it is at least 1).
    pub vacuous: bool,
}

/// `2·Q·L_s·β`.
pub fn advantage_bound(q: f64, l_s: f64, beta: f64) -> Result<AdvantageBound> {
    check_positive("Q", q)?;
    check_positive("L_s", l_s)?;
    check_positive("β", beta)?;
    let bound = 2.0 * q * l_s * beta;
    Ok(AdvantageBound {
        bound,
        vacuous: bound >= 1.0,
    })
}

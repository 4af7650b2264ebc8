//! Rényi-DP accountant for the (Poisson) subsampled Gaussian mechanism.
//!
//! Per-step RDP at order `α` follows Mironov, Talwar & Zhang, "Rényi
//! Differential Privacy of the Sampled Gaussian Mechanism" (2019): the
//! binomial expansion for integer orders, the two-sided erfc series for
//! fractional ones. For `q = 1` it reduces to the exact Gaussian value
//! `α / (2σ²)`. Conversion to `(ε, δ)` uses the bound of Balle et al.
//! (2020), Theorem 21:
//!
//! `ε = T·rdp(α) + ln((α−1)/α) − (ln δ + ln α)/(α − 1)`
//!
//! which is never worse than the classical `T·rdp(α) + ln(1/δ)/(α−1)`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Inputs of one DP-SGD privacy computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// `f64::INFINITY` for non-private runs.
    #[serde(with = "inf_as_null")]
    pub epsilon: f64,
    pub delta: f64,
    /// RDP order achieving the minimum; `None` for the trivial cases.
    pub order: Option<f64>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Per-step RDP values at a list of orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub points: Vec<(f64, f64)>,
}

/// Default order grid: 1.25, 1.5, 1.75, 2, 2.5, 3, 3.5, ..., then integers
/// to 64, plus a dense band of fractional orders in [2, 20].
pub fn default_orders() -> Vec<f64> {
    let mut o = vec![1.25, 1.5, 1.75];
    o.extend((4..=40).map(|k| k as f64 * 0.5)); // 2.0 ..= 20.0 step 0.5
    o.extend((21..=64).map(f64::from));
    o
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        // Underflow of a non-negative quantity; treat as zero.
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// `ln |C(α, i)|` for real `α`.
fn ln_abs_binom(alpha: f64, i: usize) -> f64 {
    let i_f = i as f64;
    let diff = alpha - i_f + 1.0;
    if diff > 0.0 {
        ln_gamma(alpha + 1.0) - ln_gamma(i_f + 1.0) - ln_gamma(diff)
    } else {
        // |Γ(diff)| via reflection: Γ(z)Γ(1−z) = π / sin(πz).
        let s = (std::f64::consts::PI * diff).sin().abs();
        ln_gamma(alpha + 1.0)
            - ln_gamma(i_f + 1.0)
            - (std::f64::consts::PI.ln() - s.ln() - ln_gamma(1.0 - diff))
    }
}

fn binom_sign(alpha: f64, i: usize) -> f64 {
    // sign of Π_{k<i} (α − k)
    let negatives = (0..i).filter(|&k| alpha - (k as f64) < 0.0).count();
    if negatives % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `ln erfc(x)`, accurate for large positive `x`.
fn log_erfc(x: f64) -> f64 {
    if x < 5.0 {
        erfc(x).ln()
    } else {
        // Asymptotic expansion: erfc(x) ≈ e^{-x²}/(x√π) · (1 − 1/(2x²) + 3/(4x⁴) − 15/(8x⁶))
        let x2 = x * x;
        let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
        -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
    }
}

fn log_a_int(q: f64, sigma: f64, alpha: u32) -> f64 {
    let mut log_a = f64::NEG_INFINITY;
    for i in 0..=alpha as usize {
        let i_f = i as f64;
        let coef =
            ln_abs_binom(alpha as f64, i) + i_f * q.ln() + (alpha as f64 - i_f) * (-q).ln_1p();
        let s = coef + (i_f * i_f - i_f) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, s);
    }
    log_a
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (mut log_a0, mut log_a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2s = std::f64::consts::SQRT_2 * sigma;
    let mut i = 0usize;
    loop {
        let i_f = i as f64;
        let j = alpha - i_f;
        let log_coef = ln_abs_binom(alpha, i);
        let positive = binom_sign(alpha, i) > 0.0;
        let log_t0 = log_coef + i_f * q.ln() + j * (-q).ln_1p();
        let log_t1 = log_coef + j * q.ln() + i_f * (-q).ln_1p();
        let log_e0 = 0.5f64.ln() + log_erfc((i_f - z0) / sqrt2s);
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / sqrt2s);
        let log_s0 = log_t0 + (i_f * i_f - i_f) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if positive {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        i += 1;
        if (log_s0.max(log_s1) < -30.0 && i as f64 > alpha) || i > 10_000 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

/// Per-step RDP of the subsampled Gaussian mechanism at `order`.
pub fn rdp_subsampled_gaussian(noise_multiplier: f64, q: f64, order: f64) -> Result<f64> {
    if !(noise_multiplier > 0.0) || !noise_multiplier.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise multiplier must be positive and finite, got {noise_multiplier}"
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        if q == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::InvalidArgument(format!(
            "sampling rate must lie in (0, 1], got {q}"
        )));
    }
    if !(order > 1.0) || !order.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "RDP order must exceed 1, got {order}"
        )));
    }
    if q == 1.0 {
        return Ok(order / (2.0 * noise_multiplier * noise_multiplier));
    }
    let log_a = if order.fract() == 0.0 && order <= 4096.0 {
        log_a_int(q, noise_multiplier, order as u32)
    } else {
        log_a_frac(q, noise_multiplier, order)
    };
    Ok((log_a / (order - 1.0)).max(0.0))
}

pub fn rdp_curve(noise_multiplier: f64, q: f64, orders: &[f64]) -> Result<RdpCurve> {
    let points = orders
        .iter()
        .map(|&o| rdp_subsampled_gaussian(noise_multiplier, q, o).map(|r| (o, r)))
        .collect::<Result<_>>()?;
    Ok(RdpCurve { points })
}

/// `T`-fold composition and conversion to `(ε, δ)`.
pub fn compose_and_convert(curve: &RdpCurve, steps: usize, delta: f64) -> Result<PrivacyParams> {
    if curve.points.is_empty() {
        return Err(Error::InvalidArgument("empty RDP curve".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "δ must lie in (0, 1), got {delta}"
        )));
    }
    if steps == 0 {
        return Ok(PrivacyParams {
            epsilon: 0.0,
            delta,
            order: None,
        });
    }
    let t = steps as f64;
    let mut best = (f64::INFINITY, None);
    for &(o, r) in &curve.points {
        let eps = t * r + ((o - 1.0) / o).ln() - (delta.ln() + o.ln()) / (o - 1.0);
        if eps < best.0 {
            best = (eps, Some(o));
        }
    }
    Ok(PrivacyParams {
        epsilon: best.0.max(0.0),
        delta,
        order: best.1,
    })
}

/// ε for a DP-SGD run. `σ = 0` is the non-private sentinel (ε = ∞).
pub fn epsilon(spec: &MechanismSpec) -> Result<PrivacyParams> {
    if spec.steps == 0 {
        return Ok(PrivacyParams {
            epsilon: 0.0,
            delta: spec.delta,
            order: None,
        });
    }
    if spec.noise_multiplier == 0.0 {
        return Ok(PrivacyParams {
            epsilon: f64::INFINITY,
            delta: spec.delta,
            order: None,
        });
    }
    let curve = rdp_curve(spec.noise_multiplier, spec.sampling_rate, &default_orders())?;
    compose_and_convert(&curve, spec.steps, spec.delta)
}

/// Classical Gaussian-mechanism calibration `σ = √(2 ln(1.25/δ))·Δ₂/ε`.
pub fn gaussian_sigma(epsilon: f64, delta: f64, l2_sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ε must be positive, got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "δ must lie in (0, 1), got {delta}"
        )));
    }
    if !(l2_sensitivity >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sensitivity must be non-negative, got {l2_sensitivity}"
        )));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * l2_sensitivity / epsilon)
}

/// Geometric grid searched by [`calibrate_noise`]: `σ_k = σ_lo · r^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaGrid {
    pub lo: f64,
    pub ratio: f64,
    pub len: usize,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        // 0.05 .. ~500 in 0.1% increments.
        Self {
            lo: 0.05,
            ratio: 1.001,
            len: 9212,
        }
    }
}

impl SigmaGrid {
    pub fn at(&self, k: usize) -> f64 {
        self.lo * self.ratio.powi(k as i32)
    }
}

/// Smallest grid σ whose ε does not exceed `target_epsilon`.
/// `target_epsilon = ∞` returns the non-private sentinel `0`.
pub fn calibrate_noise(target_epsilon: f64, delta: f64, q: f64, steps: usize) -> Result<f64> {
    calibrate_noise_on(target_epsilon, delta, q, steps, SigmaGrid::default())
}

pub fn calibrate_noise_on(
    target_epsilon: f64,
    delta: f64,
    q: f64,
    steps: usize,
    grid: SigmaGrid,
) -> Result<f64> {
    if target_epsilon.is_infinite() && target_epsilon > 0.0 {
        return Ok(0.0);
    }
    if !(target_epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target ε must be positive, got {target_epsilon}"
        )));
    }
    let eps_at = |k: usize| -> Result<f64> {
        Ok(epsilon(&MechanismSpec {
            noise_multiplier: grid.at(k),
            sampling_rate: q,
            steps,
            delta,
        })?
        .epsilon)
    };
    let last = grid.len - 1;
    if eps_at(last)? > target_epsilon {
        return Err(Error::InvalidArgument(format!(
            "target ε = {target_epsilon} unreachable with σ ≤ {:.1}",
            grid.at(last)
        )));
    }
    if eps_at(0)? <= target_epsilon {
        return Ok(grid.at(0));
    }
    // invariant: eps(lo) > target, eps(hi) <= target
    let (mut lo, mut hi) = (0usize, last);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if eps_at(mid)? <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(grid.at(hi))
}

use crate::error::{Error, Result};
use crate::nn::norm;

/// `grad · min(1, C/‖grad‖₂)`.
pub fn clip(grad: &[f64], clip_norm: f64) -> Result<Vec<f64>> {
    let mut out = grad.to_vec();
    clip_in_place(&mut out, clip_norm)?;
    Ok(out)
}

/// In-place clipping; returns the pre-clip norm.
pub fn clip_in_place(grad: &mut [f64], clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip norm must be positive, got {clip_norm}"
        )));
    }
    let n = norm(grad);
    if n > clip_norm {
        let s = clip_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    Ok(n)
}

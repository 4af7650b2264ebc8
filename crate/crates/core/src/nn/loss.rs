use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::mlp::Network;
use crate::nn::tensor::Tensor;

/// Numerically stable `ln(1 + e^v)`.
#[inline]
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss on a raw logit with label `y ∈ {-1, +1}`:
/// `ln(1 + e^{-y·u})`, and its derivative in `u`.
#[inline]
pub fn logistic_loss(logit: f64, label: f64) -> (f64, f64) {
    let m = -label * logit;
    (softplus(m), -label * sigmoid(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    LogisticWithLogits,
    WeightedSquaredError,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "logistic-with-logits" => Ok(LossKind::LogisticWithLogits),
            "wse" | "weighted-squared-error" => Ok(LossKind::WeightedSquaredError),
            other => Err(Error::InvalidArgument(format!(
                "unsupported loss kind `{other}`"
            ))),
        }
    }
}

/// Per-sample supervision.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Label in {-1, +1}.
    Label(f64),
    /// Regression target with a non-negative weight.
    Weighted { target: &'a [f64], weight: f64 },
}

/// Batch supervision aligned with the rows of a batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Labels(&'a [f64]),
    Weighted {
        targets: &'a Tensor,
        weights: &'a [f64],
    },
}

impl<'a> Targets<'a> {
    fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Weighted { targets, .. } => targets.rows(),
        }
    }

    fn get(&self, i: usize) -> Target<'a> {
        match *self {
            Targets::Labels(l) => Target::Label(l[i]),
            Targets::Weighted { targets, weights } => Target::Weighted {
                target: targets.row(i),
                weight: weights[i],
            },
        }
    }
}

impl LossKind {
    /// Loss value and its gradient with respect to the network output.
    pub fn evaluate(self, output: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
        match (self, target) {
            (LossKind::LogisticWithLogits, Target::Label(y)) => {
                if output.len() != 1 {
                    return Err(Error::Dimension(format!(
                        "logistic loss needs a single logit, got {} outputs",
                        output.len()
                    )));
                }
                let (l, d) = logistic_loss(output[0], y);
                Ok((l, vec![d]))
            }
            (LossKind::WeightedSquaredError, Target::Weighted { target, weight }) => {
                if output.len() != target.len() {
                    return Err(Error::Dimension(format!(
                        "prediction width {} but target width {}",
                        output.len(),
                        target.len()
                    )));
                }
                let mut loss = 0.0;
                let grad = output
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let r = p - t;
                        loss += r * r;
                        2.0 * weight * r
                    })
                    .collect();
                Ok((weight * loss, grad))
            }
            (kind, _) => Err(Error::InvalidArgument(format!(
                "loss kind {kind:?} does not accept the given targets"
            ))),
        }
    }
}

/// One gradient per sample, each aligned with `Network::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads {
    grads: Vec<Vec<f64>>,
}

impl PerSampleGrads {
    pub fn new(grads: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = grads.first() {
            if grads.iter().any(|g| g.len() != first.len()) {
                return Err(Error::Dimension(
                    "per-sample gradients differ in length".into(),
                ));
            }
        }
        Ok(Self { grads })
    }

    pub fn batch_size(&self) -> usize {
        self.grads.len()
    }

    pub fn dim(&self) -> usize {
        self.grads.first().map_or(0, Vec::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(Vec::as_slice)
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.grads[i]
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.grads
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for g in &self.grads {
            for (o, v) in out.iter_mut().zip(g) {
                *o += v;
            }
        }
        let n = self.grads.len().max(1) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Loss and parameter gradient for a single sample.
pub fn sample_loss_grad(
    net: &Network,
    x: &[f64],
    kind: LossKind,
    target: Target<'_>,
) -> Result<(f64, Vec<f64>)> {
    let trace = net.trace(x)?;
    let (loss, out_grad) = kind.evaluate(trace.output(), target)?;
    let mut grad = vec![0.0; net.num_params()];
    net.backprop_params(&trace, &out_grad, &mut grad, 1.0);
    Ok((loss, grad))
}

/// Per-sample losses and exact per-sample parameter gradients.
pub fn backward_per_sample(
    net: &Network,
    batch: &Tensor,
    kind: LossKind,
    targets: Targets<'_>,
) -> Result<(Vec<f64>, PerSampleGrads)> {
    if targets.len() != batch.rows() {
        return Err(Error::Dimension(format!(
            "{} targets for {} samples",
            targets.len(),
            batch.rows()
        )));
    }
    let mut losses = Vec::with_capacity(batch.rows());
    let mut grads = Vec::with_capacity(batch.rows());
    for (i, row) in batch.iter_rows().enumerate() {
        let (l, g) = sample_loss_grad(net, row, kind, targets.get(i))?;
        losses.push(l);
        grads.push(g);
    }
    Ok((losses, PerSampleGrads { grads }))
}

/// Loss only, no gradient.
pub fn sample_loss(net: &Network, x: &[f64], kind: LossKind, target: Target<'_>) -> Result<f64> {
    let out = net.forward_sample(x)?;
    Ok(kind.evaluate(&out, target)?.0)
}

/// Largest `|analytic − central difference| / max(1, |analytic|)` over all
/// parameters.
pub fn grad_check(
    net: &Network,
    x: &[f64],
    kind: LossKind,
    target: Target<'_>,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (_, analytic) = sample_loss_grad(net, x, kind, target)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + h;
        let up = sample_loss(&probe, x, kind, target)?;
        probe.params_mut()[k] = orig - h;
        let down = sample_loss(&probe, x, kind, target)?;
        probe.params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

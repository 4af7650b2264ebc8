use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Dot product with independent partial sums so the adds pipeline.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Layer widths `[input, hidden..., output]`, one activation per hidden
/// layer, identity on the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        if activations.len() != widths.len() - 2 {
            return Err(Error::InvalidArgument(format!(
                "{} hidden layers but {} activations",
                widths.len() - 2,
                activations.len()
            )));
        }
        Ok(Self {
            widths,
            activations,
        })
    }

    /// Same activation on every hidden layer.
    pub fn uniform(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::new(widths, vec![activation; hidden])
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `l`'s weight block; biases follow the weights.
    fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has input and output")
    }
}

/// A dense network: spec, flat parameter vector and the seed it was
/// initialized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: MlpSpec,
    seed: u64,
    params: Vec<f64>,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(spec.param_count());
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-s..=s)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { spec, seed, params }
    }

    pub fn from_params(spec: MlpSpec, seed: u64, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::Dimension(format!(
                "spec has {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Self { spec, seed, params })
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let params = vec![0.0; spec.param_count()];
        Self {
            spec,
            seed: 0,
            params,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_width() {
            return Err(Error::Dimension(format!(
                "input width {} but network expects {}",
                x.len(),
                self.spec.input_width()
            )));
        }
        Ok(())
    }

    /// Forward one sample, keeping every layer's output.
    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let n_layers = self.spec.num_layers();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let off = self.spec.layer_offset(l);
            let weights = &self.params[off..off + fan_in * fan_out];
            let bias = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let input = &acts[l];
            let mut out: Vec<f64> = weights
                .chunks_exact(fan_in)
                .zip(bias)
                .map(|(row, b)| b + dot(row, input))
                .collect();
            if l + 1 < n_layers {
                let act = self.spec.activations[l];
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(out);
        }
        let trace = Trace { acts };
        if trace.output().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok(trace)
    }

    pub fn forward_sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.acts.pop().expect("non-empty"))
    }

    /// Batched forward pass over the rows of `batch`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        if batch.trailing() != self.spec.input_width() {
            return Err(Error::Dimension(format!(
                "batch trailing dimension {} but network expects {}",
                batch.trailing(),
                self.spec.input_width()
            )));
        }
        let rows = batch.rows();
        let mut out = Vec::with_capacity(rows * self.spec.output_width());
        for row in batch.iter_rows() {
            out.extend(self.forward_sample(row)?);
        }
        Ok(
            Tensor::matrix(rows, self.spec.output_width(), out)?
                .with_provenance(batch.provenance()),
        )
    }

    /// Vector-Jacobian product. Adds `scale · (∂out/∂θ)ᵀ out_grad` into
    /// `param_grad` and returns `(∂out/∂x)ᵀ out_grad`.
    pub fn backprop(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        param_grad: &mut [f64],
        scale: f64,
    ) -> Vec<f64> {
        self.vjp(trace, out_grad, Some((param_grad, scale)), true)
    }

    /// [`Network::backprop`] without the input gradient.
    pub fn backprop_params(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        param_grad: &mut [f64],
        scale: f64,
    ) {
        self.vjp(trace, out_grad, Some((param_grad, scale)), false);
    }

    /// `(∂out/∂x)ᵀ out_grad` only.
    pub fn input_grad(&self, trace: &Trace, out_grad: &[f64]) -> Vec<f64> {
        self.vjp(trace, out_grad, None, true)
    }

    fn vjp(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        mut params_out: Option<(&mut [f64], f64)>,
        want_input: bool,
    ) -> Vec<f64> {
        debug_assert_eq!(out_grad.len(), self.spec.output_width());
        let n_layers = self.spec.num_layers();
        let mut delta: Vec<f64> = out_grad.to_vec();
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                let act = self.spec.activations[l];
                for (d, &o) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    *d *= act.derivative_from_output(o);
                }
            }
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let off = self.spec.layer_offset(l);
            if let Some((param_grad, scale)) = params_out.as_mut() {
                debug_assert_eq!(param_grad.len(), self.params.len());
                let input = &trace.acts[l];
                let (w_grad, rest) = param_grad[off..].split_at_mut(fan_in * fan_out);
                for ((row, &d), b) in w_grad
                    .chunks_exact_mut(fan_in)
                    .zip(&delta)
                    .zip(rest.iter_mut())
                {
                    if d == 0.0 {
                        continue;
                    }
                    let sd = *scale * d;
                    *b += sd;
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += sd * a;
                    }
                }
            }
            if l == 0 && !want_input {
                return Vec::new();
            }
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for (row, &d) in weights.chunks_exact(fan_in).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            delta = next;
        }
        delta
    }
}

/// Euclidean distance between the parameter vectors of two networks with the
/// same spec.
pub fn param_distance(a: &Network, b: &Network) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::Dimension("networks have different specs".into()));
    }
    Ok(a.params
        .iter()
        .zip(&b.params)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

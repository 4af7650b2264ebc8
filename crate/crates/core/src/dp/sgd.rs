use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dp::clip::clip_in_place;
use crate::dp::config::{DpSgdConfig, Sampling};
use crate::dp::trace::{StepRecord, StepTrace};
use crate::error::{Error, Result};
use crate::nn::{
    norm, param_distance, sample_loss, LossKind, Network, PerSampleGrads, Target, Tensor,
};
use crate::rng::{derive_seed, rng_from_seed, RngPlan, Stream, StreamRng};

/// A per-example differentiable training objective over an indexed dataset.
///
/// `step` is passed so objectives with their own randomness (diffusion noise
/// draws) can derive it from `(step, index)`; coupled runs then see the same
/// draws for the same example.
pub trait Objective: Sync {
    fn len(&self) -> usize;

    /// Add the gradient of example `index`'s loss into `grad` and return
    /// the loss.
    fn accumulate_grad(
        &self,
        net: &Network,
        index: usize,
        step: usize,
        grad: &mut [f64],
    ) -> Result<f64>;

    fn example_loss(&self, net: &Network, index: usize, step: usize) -> Result<f64>;

    fn example_loss_grad(
        &self,
        net: &Network,
        index: usize,
        step: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; net.num_params()];
        let loss = self.accumulate_grad(net, index, step, &mut grad)?;
        Ok((loss, grad))
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Plain supervised objective: rows of `inputs` with per-row targets.
pub struct SupervisedObjective<'a> {
    pub inputs: &'a Tensor,
    pub kind: LossKind,
    /// Labels in {-1, +1} for the logistic loss.
    pub labels: Option<&'a [f64]>,
    /// Regression targets (weight 1) for the squared loss.
    pub targets: Option<&'a Tensor>,
}

impl<'a> SupervisedObjective<'a> {
    pub fn logistic(inputs: &'a Tensor, labels: &'a [f64]) -> Self {
        Self {
            inputs,
            kind: LossKind::LogisticWithLogits,
            labels: Some(labels),
            targets: None,
        }
    }

    pub fn squared(inputs: &'a Tensor, targets: &'a Tensor) -> Self {
        Self {
            inputs,
            kind: LossKind::WeightedSquaredError,
            labels: None,
            targets: Some(targets),
        }
    }

    fn target(&self, i: usize) -> Result<Target<'a>> {
        match (self.kind, self.labels, self.targets) {
            (LossKind::LogisticWithLogits, Some(l), _) => Ok(Target::Label(l[i])),
            (LossKind::WeightedSquaredError, _, Some(t)) => Ok(Target::Weighted {
                target: t.row(i),
                weight: 1.0,
            }),
            _ => Err(Error::InvalidArgument(
                "objective lacks targets for its loss".into(),
            )),
        }
    }
}

impl Objective for SupervisedObjective<'_> {
    fn len(&self) -> usize {
        self.inputs.rows()
    }

    fn accumulate_grad(
        &self,
        net: &Network,
        index: usize,
        _step: usize,
        grad: &mut [f64],
    ) -> Result<f64> {
        let trace = net.trace(self.inputs.row(index))?;
        let (loss, out_grad) = self.kind.evaluate(trace.output(), self.target(index)?)?;
        net.backprop_params(&trace, &out_grad, grad, 1.0);
        Ok(loss)
    }

    fn example_loss(&self, net: &Network, index: usize, _step: usize) -> Result<f64> {
        sample_loss(net, self.inputs.row(index), self.kind, self.target(index)?)
    }
}

/// Gaussian noise vector regenerated from its recorded seed.
pub fn noise_vector(seed: u64, dim: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; dim];
    }
    let mut rng = rng_from_seed(seed);
    (0..dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Where batches come from.
#[derive(Debug, Clone)]
pub enum BatchPlan {
    Random,
    /// Explicit index lists, one per step.
    Scripted(Vec<Vec<usize>>),
}

struct BatchSampler {
    rng: StreamRng,
    mode: Sampling,
    script: Option<Vec<Vec<usize>>>,
    perm: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchSampler {
    fn new(plan: &RngPlan, mode: Sampling, m: usize, batch_size: usize, script: BatchPlan) -> Self {
        Self {
            rng: plan.stream(Stream::BatchSelection),
            mode,
            script: match script {
                BatchPlan::Random => None,
                BatchPlan::Scripted(s) => Some(s),
            },
            perm: (0..m).collect(),
            pos: m,
            batch_size,
        }
    }

    fn next(&mut self, step: usize) -> Result<Vec<usize>> {
        if let Some(script) = &self.script {
            return script.get(step).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("batch script has no entry for step {step}"))
            });
        }
        let m = self.perm.len();
        match self.mode {
            Sampling::WithoutReplacement => {
                if self.pos + self.batch_size > m {
                    self.perm.sort_unstable();
                    self.perm.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                let b = self.perm[self.pos..self.pos + self.batch_size].to_vec();
                self.pos += self.batch_size;
                Ok(b)
            }
            Sampling::Poisson => {
                let q = self.batch_size as f64 / m as f64;
                Ok((0..m).filter(|_| self.rng.gen::<f64>() < q).collect())
            }
        }
    }
}

/// Running clipped sum with reusable buffers and norm statistics.
struct Accumulator {
    sum: Vec<f64>,
    buf: Vec<f64>,
    norm_min: f64,
    norm_sum: f64,
    norm_max: f64,
    clipped_max: f64,
    count: usize,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            buf: vec![0.0; dim],
            norm_min: f64::INFINITY,
            norm_sum: 0.0,
            norm_max: 0.0,
            clipped_max: 0.0,
            count: 0,
        }
    }

    fn reset(&mut self) {
        self.sum.fill(0.0);
        self.norm_min = f64::INFINITY;
        self.norm_sum = 0.0;
        self.norm_max = 0.0;
        self.clipped_max = 0.0;
        self.count = 0;
    }

    /// Clip the gradient held in `buf` and add it to the sum.
    fn push(&mut self, clip_norm: Option<f64>) -> Result<()> {
        let pre = match clip_norm {
            Some(c) => clip_in_place(&mut self.buf, c)?,
            None => norm(&self.buf),
        };
        let post = norm(&self.buf);
        self.norm_min = self.norm_min.min(pre);
        self.norm_max = self.norm_max.max(pre);
        self.clipped_max = self.clipped_max.max(post);
        self.norm_sum += pre;
        self.count += 1;
        for (s, v) in self.sum.iter_mut().zip(&self.buf) {
            *s += v;
        }
        Ok(())
    }

    fn finish(&mut self, denom: f64) {
        if self.count > 0 && denom > 0.0 {
            self.sum.iter_mut().for_each(|s| *s /= denom);
        }
    }

    fn norm_stats(&self) -> (f64, f64) {
        if self.count == 0 {
            (0.0, 0.0)
        } else {
            (self.norm_min, self.norm_sum / self.count as f64)
        }
    }
}

/// `θ ← θ − lr·(mean + z)` with `z` regenerated from `noise_seed` in the
/// same order as [`noise_vector`].
fn apply_update(net: &mut Network, mean: &[f64], noise_seed: u64, std: f64, lr: f64) -> Result<()> {
    if std == 0.0 {
        for (p, g) in net.params_mut().iter_mut().zip(mean) {
            *p -= lr * g;
        }
    } else {
        let mut rng = rng_from_seed(noise_seed);
        for (p, g) in net.params_mut().iter_mut().zip(mean) {
            let z: f64 = rng.sample(StandardNormal);
            *p -= lr * (g + std * z);
        }
    }
    if net.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite parameters after update".into()));
    }
    Ok(())
}

/// One DP-SGD update: clip each per-sample gradient, average, add
/// `N(0, (σC/b)²)` noise drawn from `noise_seed`, step with rate `lr`.
pub fn dp_step(
    net: &Network,
    grads: &PerSampleGrads,
    cfg: &DpSgdConfig,
    lr: f64,
    noise_seed: u64,
) -> Result<Network> {
    if grads.batch_size() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if grads.dim() != net.num_params() {
        return Err(Error::Dimension(format!(
            "gradients have {} entries, network has {} parameters",
            grads.dim(),
            net.num_params()
        )));
    }
    let denom = match cfg.sampling {
        Sampling::WithoutReplacement => grads.batch_size() as f64,
        Sampling::Poisson => cfg.batch_size as f64,
    };
    let mut acc = Accumulator::new(net.num_params());
    for g in grads.iter() {
        acc.buf.copy_from_slice(g);
        acc.push(cfg.clip_norm)?;
    }
    acc.finish(denom);
    let mut out = net.clone();
    apply_update(&mut out, &acc.sum, noise_seed, cfg.noise_std(), lr)?;
    Ok(out)
}

/// Stateful DP-SGD driver: batch sampling, noise seeds and the audit trace.
///
/// Use [`DpSgd::step_with`] when the per-sample gradients come from
/// something other than an [`Objective`] (the GAN discriminator).
pub struct DpSgd<'c> {
    cfg: &'c DpSgdConfig,
    sampler: BatchSampler,
    noise_root: u64,
    step: usize,
    trace: StepTrace,
    acc: Option<Accumulator>,
}

impl<'c> DpSgd<'c> {
    pub fn new(cfg: &'c DpSgdConfig, plan: &RngPlan, dataset_size: usize) -> Result<Self> {
        Self::with_batches(cfg, plan, dataset_size, BatchPlan::Random)
    }

    pub fn with_batches(
        cfg: &'c DpSgdConfig,
        plan: &RngPlan,
        dataset_size: usize,
        batches: BatchPlan,
    ) -> Result<Self> {
        cfg.validate()?;
        if matches!(batches, BatchPlan::Random) && dataset_size < cfg.batch_size {
            return Err(Error::Config(format!(
                "dataset of {dataset_size} examples is smaller than batch size {}",
                cfg.batch_size
            )));
        }
        Ok(Self {
            cfg,
            sampler: BatchSampler::new(plan, cfg.sampling, dataset_size, cfg.batch_size, batches),
            noise_root: plan.stream_seed(Stream::DpNoise),
            step: 0,
            trace: StepTrace::default(),
            acc: None,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn noise_seed(&self, step: usize) -> u64 {
        derive_seed(self.noise_root, &[step as u64])
    }

    pub fn trace(&self) -> &StepTrace {
        &self.trace
    }

    pub fn into_trace(self) -> StepTrace {
        self.trace
    }

    fn denominator(&self, batch_len: usize) -> f64 {
        match self.cfg.sampling {
            Sampling::WithoutReplacement => batch_len as f64,
            Sampling::Poisson => self.cfg.batch_size as f64,
        }
    }

    /// Draw the next batch, compute per-sample gradients with `grad_fn`,
    /// and apply the noisy clipped update.
    pub fn step_with<F>(&mut self, net: &mut Network, grad_fn: F) -> Result<()>
    where
        F: FnOnce(&Network, &[usize]) -> Result<PerSampleGrads>,
    {
        let mut grads = None;
        let mut grad_fn = Some(grad_fn);
        self.step_inner(net, None, |n, batch, pos, buf| {
            if pos == 0 {
                let f = grad_fn.take().expect("called once per step");
                let g = f(n, batch)?;
                if g.batch_size() != batch.len() {
                    return Err(Error::Dimension(format!(
                        "{} gradients for a batch of {}",
                        g.batch_size(),
                        batch.len()
                    )));
                }
                grads = Some(g);
            }
            let g = grads.as_ref().expect("computed at position 0").get(pos);
            if g.len() != buf.len() {
                return Err(Error::Dimension(format!(
                    "gradient length {} vs params {}",
                    g.len(),
                    buf.len()
                )));
            }
            buf.copy_from_slice(g);
            Ok(())
        })
    }

    /// Streaming variant: `grad_fn(net, index, buf)` adds example `index`'s
    /// gradient into the zeroed `buf`.
    pub fn step_each<F>(&mut self, net: &mut Network, mut grad_fn: F) -> Result<()>
    where
        F: FnMut(&Network, usize, &mut [f64]) -> Result<()>,
    {
        self.step_inner(net, None, |n, batch, pos, buf| grad_fn(n, batch[pos], buf))
    }

    fn step_inner<F>(
        &mut self,
        net: &mut Network,
        exclude: Option<usize>,
        mut grad_fn: F,
    ) -> Result<()>
    where
        F: FnMut(&Network, &[usize], usize, &mut [f64]) -> Result<()>,
    {
        let t = self.step;
        let dim = net.num_params();
        let mut acc = match self.acc.take() {
            Some(a) if a.sum.len() == dim => a,
            _ => Accumulator::new(dim),
        };
        acc.reset();
        let mut run = || -> Result<StepRecord> {
            let mut batch = self.sampler.next(t)?;
            if let Some(r) = exclude {
                batch.retain(|&i| i != r);
            }
            for pos in 0..batch.len() {
                acc.buf.fill(0.0);
                grad_fn(net, &batch, pos, &mut acc.buf)?;
                acc.push(self.cfg.clip_norm)?;
            }
            acc.finish(self.denominator(batch.len()));
            let seed = self.noise_seed(t);
            let lr = self.cfg.learning_rate.at(t);
            apply_update(net, &acc.sum, seed, self.cfg.noise_std(), lr)?;
            let (norm_min, norm_mean) = acc.norm_stats();
            Ok(StepRecord {
                step: t,
                learning_rate: lr,
                batch,
                grad_norm_min: norm_min,
                grad_norm_mean: norm_mean,
                grad_norm_max: acc.norm_max,
                clipped_norm_max: acc.clipped_max,
                clipped_mean_norm: norm(&acc.sum),
                noise_seed: seed,
            })
        };
        let record = run().map_err(|e| e.at_step(t));
        self.acc = Some(acc);
        self.trace.steps.push(record?);
        self.step += 1;
        Ok(())
    }
}

/// Run `cfg.steps` DP-SGD steps of `objective` starting from `net`.
pub fn train<O: Objective + ?Sized>(
    net: &Network,
    objective: &O,
    cfg: &DpSgdConfig,
    plan: &RngPlan,
) -> Result<(Network, StepTrace)> {
    let mut engine = DpSgd::new(cfg, plan, objective.len())?;
    let mut cur = net.clone();
    for t in 0..cfg.steps {
        engine.step_each(&mut cur, |n, i, buf| {
            objective.accumulate_grad(n, i, t, buf).map(|_| ())
        })?;
    }
    Ok((cur, engine.into_trace()))
}

/// Result of two lock-stepped runs on `D` and `D \ {removed}`.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub full: Network,
    pub reduced: Network,
    /// `‖θ_t − θ'_t‖` after each step (entry 0 is the shared start).
    pub divergence: Vec<f64>,
    pub full_trace: StepTrace,
    pub reduced_trace: StepTrace,
}

pub fn coupled_train<O: Objective + ?Sized>(
    net: &Network,
    objective: &O,
    removed: usize,
    cfg: &DpSgdConfig,
    plan: &RngPlan,
) -> Result<CoupledRun> {
    coupled_train_with(net, objective, removed, cfg, plan, BatchPlan::Random)
}

/// Coupled training: both runs consume the same batch-index draws (indices
/// into `D`; the reduced run drops `removed` from any batch containing it)
/// and the same noise vectors.
pub fn coupled_train_with<O: Objective + ?Sized>(
    net: &Network,
    objective: &O,
    removed: usize,
    cfg: &DpSgdConfig,
    plan: &RngPlan,
    batches: BatchPlan,
) -> Result<CoupledRun> {
    if removed >= objective.len() {
        return Err(Error::InvalidArgument(format!(
            "removed index {removed} outside dataset of size {}",
            objective.len()
        )));
    }
    let plan = RngPlan::coupled(plan.master_seed);
    let mut full_engine = DpSgd::with_batches(cfg, &plan, objective.len(), batches.clone())?;
    let mut reduced_engine = DpSgd::with_batches(cfg, &plan, objective.len(), batches)?;
    let mut full = net.clone();
    let mut reduced = net.clone();
    let mut divergence = vec![0.0];
    for t in 0..cfg.steps {
        full_engine.step_each(&mut full, |n, i, buf| {
            objective.accumulate_grad(n, i, t, buf).map(|_| ())
        })?;
        reduced_engine.step_inner(&mut reduced, Some(removed), |n, batch, pos, buf| {
            objective.accumulate_grad(n, batch[pos], t, buf).map(|_| ())
        })?;
        divergence.push(param_distance(&full, &reduced)?);
    }
    Ok(CoupledRun {
        full,
        reduced,
        divergence,
        full_trace: full_engine.into_trace(),
        reduced_trace: reduced_engine.into_trace(),
    })
}

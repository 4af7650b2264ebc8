use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dp::DpSgdConfig;
use crate::error::{Error, Result};
use crate::harness::config::{AccountantRecord, ExperimentConfig};
use crate::harness::frechet::frechet_gaussian_proxy;
use crate::mia::{
    evaluate, fit_attack, make_splits, train_and_score, train_shadows, write_scores, AttackMetrics,
    AttackModel, DiffusionTrainer, GanTrainer, ModelId, ScoreRecord, SplitPlan, METRICS_CSV_HEADER,
};
use crate::models::{
    conditioned, diffusion_sample, save_model, write_sample_grid, DiffusionModel,
    DiffusionObjective, GanDiscObjective, GanModel, ModelCheckpoint, ModelFamily, NoiseDraw,
};
use crate::nn::{softplus, Network, Tensor};
use crate::rng::{derive_seed, RngPlan, Stream};
use crate::stability::{
    estimate_beta, estimate_density_bound, estimate_lipschitz, estimate_residual_bound,
    lambda_bar_expected, select_removed, BoundInputs, BoundReport, MIN_DENSITY_SCORES,
};

pub const MANIFEST_FORMAT: &str = "dpleak-manifest/1";

const PROBE_KEY: u64 = 0x5052_4f42;
const SAMPLE_KEY: u64 = 0x5341_4d50;
const STABILITY_KEY: u64 = 0x5354_4142;

/// Every seed a run consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub split: u64,
    pub probes: u64,
    pub sampling: u64,
    pub stability: u64,
    /// Target-model streams; shadow `k` uses the child plan with key `k + 1`.
    pub target_streams: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: SeedRecord,
    pub accountant: AccountantRecord,
    pub members: usize,
    pub nonmembers: usize,
    pub shadows_disjoint: bool,
    pub attack: AttackModel,
    pub metrics: AttackMetrics,
    pub frechet: Option<f64>,
    pub bounds: Option<BoundReport>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!(
                "unknown manifest format `{}`",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Data, splits, calibrated DP settings and attack probes for one config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: Dataset,
    pub splits: SplitPlan,
    pub dp: DpSgdConfig,
    pub accountant: AccountantRecord,
    pub probes: Vec<NoiseDraw>,
    pub plan: RngPlan,
}

/// Everything a run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub model: ModelCheckpoint,
    pub target_scores: Vec<ScoreRecord>,
    pub shadow_scores: Vec<ScoreRecord>,
    pub samples: Option<Tensor>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        stage("config", config.validate())?;
        let data = stage("data", config.data.load())?;
        let splits = stage(
            "split",
            make_splits(
                data.len(),
                config.shadows,
                config.split.fractions(),
                config.split.seed,
            ),
        )?;
        let (dp, accountant) = stage("accountant", config.dp_config(splits.target.members.len()))?;
        let probes = crate::mia::diffusion_probes(
            &config.diffusion.edm,
            data.dim(),
            config.probes,
            derive_seed(config.seed, &[PROBE_KEY]),
        );
        Ok(Self {
            config: config.clone(),
            data,
            splits,
            dp,
            accountant,
            probes,
            plan: RngPlan::new(config.seed),
        })
    }

    pub fn seeds(&self) -> SeedRecord {
        let streams = [
            ("batch-selection", Stream::BatchSelection),
            ("dp-noise", Stream::DpNoise),
            ("model-init", Stream::ModelInit),
            ("data-noise", Stream::DataNoise),
        ];
        SeedRecord {
            master: self.config.seed,
            split: self.config.split.seed,
            probes: derive_seed(self.config.seed, &[PROBE_KEY]),
            sampling: derive_seed(self.config.seed, &[SAMPLE_KEY]),
            stability: derive_seed(self.config.seed, &[STABILITY_KEY]),
            target_streams: streams
                .iter()
                .map(|(n, s)| (n.to_string(), self.plan.stream_seed(*s)))
                .collect(),
        }
    }

    fn gan_trainer(&self) -> GanTrainer {
        GanTrainer {
            dp: self.dp.clone(),
            model: self.config.gan.clone(),
        }
    }

    fn diffusion_trainer(&self) -> DiffusionTrainer {
        DiffusionTrainer {
            dp: self.dp.clone(),
            model: self.config.diffusion.clone(),
            probes: self.probes.clone(),
        }
    }

    /// Stage 1: train the target on its members and score its split.
    pub fn train_target(&self) -> Result<(ModelCheckpoint, Vec<ScoreRecord>)> {
        let split = &self.splits.target;
        stage(
            "target",
            match self.config.family {
                ModelFamily::Gan => train_and_score(
                    &self.gan_trainer(),
                    &self.data,
                    split,
                    ModelId::Target,
                    &self.plan,
                )
                .map(|(m, r)| (ModelCheckpoint::Gan(m), r)),
                ModelFamily::Diffusion => train_and_score(
                    &self.diffusion_trainer(),
                    &self.data,
                    split,
                    ModelId::Target,
                    &self.plan,
                )
                .map(|(m, r)| (ModelCheckpoint::Diffusion(m), r)),
            },
        )
    }

    /// Stage 2: the shadow score corpus.
    pub fn train_shadows(&self) -> Result<Vec<ScoreRecord>> {
        stage(
            "shadows",
            match self.config.family {
                ModelFamily::Gan => {
                    train_shadows(&self.gan_trainer(), &self.data, &self.splits, &self.plan)
                }
                ModelFamily::Diffusion => train_shadows(
                    &self.diffusion_trainer(),
                    &self.data,
                    &self.splits,
                    &self.plan,
                ),
            },
        )
    }

    /// Stage 3: fit on the shadow corpus, evaluate on the target.
    pub fn attack(
        &self,
        shadow: &[ScoreRecord],
        target: &[ScoreRecord],
    ) -> Result<(AttackModel, AttackMetrics)> {
        stage(
            "attack",
            (|| {
                let model = fit_attack(shadow, self.config.attack)?;
                let metrics = evaluate(&model, target)?;
                Ok((model, metrics))
            })(),
        )
    }

    /// Class-balanced samples from `model`, clamped to the data range
    /// `[-1, 1]`.
    pub fn generate(&self, model: &ModelCheckpoint, n: usize) -> Result<Tensor> {
        let seed = derive_seed(self.config.seed, &[SAMPLE_KEY]);
        let raw = match model {
            ModelCheckpoint::Gan(g) => g.sample(n, None, seed)?.0,
            ModelCheckpoint::Diffusion(d) => {
                let k = d.n_classes;
                let mut data = Vec::with_capacity(n * d.data_dim);
                for c in 0..k {
                    let count = n / k + usize::from(c < n % k);
                    if count > 0 {
                        let part = diffusion_sample(
                            d,
                            &self.config.sampler,
                            Some(c),
                            count,
                            derive_seed(seed, &[c as u64]),
                        )?;
                        data.extend_from_slice(part.data());
                    }
                }
                Tensor::matrix(n, d.data_dim, data)?
            }
        };
        let clamped = raw.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Tensor::matrix(n, raw.trailing(), clamped)
    }

    /// Gaussian-Fréchet proxy between generated samples and the full dataset.
    pub fn quality(&self, model: &ModelCheckpoint) -> Result<(f64, Tensor)> {
        stage(
            "quality",
            (|| {
                let samples = self.generate(model, self.config.quality.samples)?;
                let reference = Tensor::matrix(
                    self.data.len(),
                    self.data.dim(),
                    self.data.features().data().to_vec(),
                )?;
                Ok((frechet_gaussian_proxy(&samples, &reference)?, samples))
            })(),
        )
    }

    /// Coupled-run β̂, the estimated constants and the closed-form bounds.
    ///
    /// The GAN pass treats discriminator training against the frozen
    /// initial generator, which is the part DP-SGD privatizes.
    pub fn stability(
        &self,
        model: &ModelCheckpoint,
        target_scores: &[ScoreRecord],
    ) -> Result<BoundReport> {
        stage("stability", self.stability_inner(model, target_scores))
    }

    fn stability_inner(
        &self,
        model: &ModelCheckpoint,
        target_scores: &[ScoreRecord],
    ) -> Result<BoundReport> {
        let s = &self.config.stability;
        let members = self.data.subset(&self.splits.target.members)?;
        let held_out: Vec<usize> = self
            .splits
            .target
            .nonmembers
            .iter()
            .copied()
            .take(s.probes)
            .collect();
        let (dim, k) = (self.data.dim(), self.data.n_classes());
        let init_seed = self.plan.stream_seed(Stream::ModelInit);
        let data_seed = self.plan.stream_seed(Stream::DataNoise);
        let stab_seed = derive_seed(self.config.seed, &[STABILITY_KEY]);
        let stab_plan = self.plan.child(STABILITY_KEY);
        let oriented: Vec<f64> = target_scores.iter().map(ScoreRecord::oriented).collect();
        // Too few target scores for a histogram leaves Q unknown, which the
        // report carries as an unbounded (vacuous) advantage bound.
        let q = if oriented.len() >= MIN_DENSITY_SCORES {
            estimate_density_bound(&oriented)?.q
        } else {
            None
        };
        let mut inputs = BoundInputs {
            l: 0.0,
            c: self.dp.clip_norm.unwrap_or(0.0),
            m: members.len(),
            alpha_sum: self.dp.learning_rate.sum(self.dp.steps),
            steps: self.dp.steps,
            noise_std: self.dp.noise_std(),
            lambda_bar: None,
            residual_bound: None,
            lambda_min: None,
            loss_range: None,
            q,
        };
        let data = &self.data;
        let (family, estimate) = match model {
            ModelCheckpoint::Gan(trained) => {
                let init = GanModel::init(&self.config.gan, dim, k, init_seed)?;
                let objective = GanDiscObjective {
                    data: &members,
                    generator: &init.generator,
                    latent_dim: init.latent_dim,
                    seed: data_seed,
                };
                let probe_loss = |net: &Network, z: usize| -> Result<f64> {
                    let i = held_out[z];
                    Ok(softplus(
                        -net.forward_sample(&conditioned(data.x(i), data.y(i), k))?[0],
                    ))
                };
                let removed =
                    select_removed(&objective, &init.discriminator, s.removed, stab_seed)?;
                let est = estimate_beta(
                    &init.discriminator,
                    &objective,
                    &removed,
                    held_out.len(),
                    probe_loss,
                    s.replicas,
                    &self.dp,
                    &stab_plan,
                )?;
                let points = [init.discriminator.clone(), trained.discriminator.clone()];
                inputs.l = estimate_lipschitz(
                    &points,
                    held_out.len(),
                    probe_loss,
                    s.lipschitz_directions,
                    s.perturbation,
                    stab_seed,
                )?
                .value;
                let losses = (0..held_out.len())
                    .map(|z| probe_loss(&trained.discriminator, z))
                    .collect::<Result<Vec<_>>>()?;
                let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                inputs.loss_range = Some((lo, hi));
                (ModelFamily::Gan, est)
            }
            ModelCheckpoint::Diffusion(trained) => {
                let init = DiffusionModel::init(&self.config.diffusion, dim, k, init_seed)?;
                let loss = init.loss();
                let objective = DiffusionObjective {
                    data: &members,
                    loss,
                    seed: data_seed,
                };
                let probes = &self.probes;
                let probe_loss = |net: &Network, z: usize| -> Result<f64> {
                    let i = held_out[z];
                    loss.loss(net, data.x(i), Some(data.y(i)), probes)
                };
                let removed = select_removed(&objective, &init.denoiser, s.removed, stab_seed)?;
                let est = estimate_beta(
                    &init.denoiser,
                    &objective,
                    &removed,
                    held_out.len(),
                    probe_loss,
                    s.replicas,
                    &self.dp,
                    &stab_plan,
                )?;
                let points = [init.denoiser.clone(), trained.denoiser.clone()];
                inputs.l = estimate_lipschitz(
                    &points,
                    held_out.len(),
                    probe_loss,
                    s.lipschitz_directions,
                    s.perturbation,
                    stab_seed,
                )?
                .value;
                let xs: Vec<&[f64]> = held_out.iter().map(|&i| data.x(i)).collect();
                let b = estimate_residual_bound(&loss, &xs, probes, |p, x_sigma, sigma| {
                    trained.predict_noise(x_sigma, sigma, Some(data.y(held_out[p])))
                })?;
                inputs.residual_bound = Some(b.value);
                inputs.lambda_bar = Some(lambda_bar_expected(&self.config.diffusion.edm)?);
                inputs.lambda_min = Some(self.config.diffusion.edm.lambda_min());
                (ModelFamily::Diffusion, est)
            }
        };
        BoundReport::compute(family, inputs, Some(estimate))
    }
}

struct Sink<'a> {
    dir: Option<&'a Path>,
    artifacts: BTreeMap<String, PathBuf>,
}

impl Sink<'_> {
    fn path(&mut self, key: &str, file: &str) -> Option<PathBuf> {
        let p = self.dir?.join(file);
        self.artifacts.insert(key.to_string(), PathBuf::from(file));
        Some(p)
    }

    fn text(&mut self, key: &str, file: &str, body: &str) -> Result<()> {
        if let Some(p) = self.path(key, file) {
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Stages 1–3 plus the optional quality and stability passes. With a
/// directory, every artifact is written as soon as its stage finishes, so a
/// failing stage leaves the earlier ones on disk.
pub fn execute(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Outcome> {
    let started = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut sink = Sink {
        dir: out_dir,
        artifacts: BTreeMap::new(),
    };
    let exp = Experiment::prepare(config)?;
    sink.text("config", "config.toml", &config.to_toml()?)?;

    let (model, target_scores) = exp.train_target()?;
    if let Some(p) = sink.path("target_model", "target_model.json") {
        stage("persist", save_model(&model, &p))?;
    }
    if let Some(p) = sink.path("target_scores", "target_scores.jsonl") {
        stage("persist", write_scores(&target_scores, &p))?;
    }

    let shadow_scores = exp.train_shadows()?;
    if let Some(p) = sink.path("shadow_scores", "shadow_scores.jsonl") {
        stage("persist", write_scores(&shadow_scores, &p))?;
    }

    let (attack, metrics) = exp.attack(&shadow_scores, &target_scores)?;
    sink.text(
        "attack",
        "attack.json",
        &serde_json::to_string_pretty(&attack)?,
    )?;
    sink.text(
        "metrics",
        "metrics.csv",
        &format!("{METRICS_CSV_HEADER}\n{}\n", metrics.csv_row()),
    )?;

    let (frechet, samples) = if config.quality.enabled {
        let (f, s) = exp.quality(&model)?;
        if let (Some(shape), Some(p)) =
            (exp.data.image_shape(), sink.path("samples", "samples.png"))
        {
            let cols = exp.data.n_classes().max(1);
            let shown = s.select_rows(&(0..s.rows().min(cols * 10)).collect::<Vec<_>>())?;
            stage("persist", write_sample_grid(&shown, shape, cols, &p))?;
        }
        (Some(f), Some(s))
    } else {
        (None, None)
    };

    let bounds = if config.stability.enabled {
        let report = exp.stability(&model, &target_scores)?;
        sink.text("bounds", "bounds.csv", &report.to_csv())?;
        Some(report)
    } else {
        None
    };

    let mut artifacts = sink.artifacts;
    if out_dir.is_some() {
        artifacts.insert("manifest".into(), PathBuf::from("manifest.json"));
    }
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash()?,
        config: config.clone(),
        seeds: exp.seeds(),
        accountant: exp.accountant,
        members: exp.splits.target.members.len(),
        nonmembers: exp.splits.target.nonmembers.len(),
        shadows_disjoint: exp.splits.shadows_disjoint,
        attack,
        metrics,
        frechet,
        bounds,
        artifacts,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        stage("persist", manifest.save(&dir.join("manifest.json")))?;
    }
    Ok(Outcome {
        manifest,
        model,
        target_scores,
        shadow_scores,
        samples,
    })
}

/// [`execute`] with every artifact persisted under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    Ok(execute(config, Some(out_dir))?.manifest)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpleak::accountant::{calibrate_noise, epsilon, MechanismSpec};
use dpleak::harness::{
    emit_report, format_epsilon, parse_epsilon, report_rows, report_table, run_experiment,
    run_grid, summarize, Experiment, ExperimentConfig, GridSpec, RunManifest, EPSILON_GRID,
};
use dpleak::mia::{
    evaluate, fit_attack, read_scores, write_scores, AttackKind, METRICS_CSV_HEADER,
};
use dpleak::models::{load_model, save_model, EdmConfig, ModelFamily};
use dpleak::stability::{lambda_bar_expected, BoundInputs, BoundReport};
use dpleak::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(
    name = "dpleak",
    version,
    about = "Membership leakage of DP-trained GANs and diffusion models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment end to end: target, shadows, attack, and the
    /// optional quality and stability passes.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: train the target model and score its split.
    TrainTarget {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: train the shadow models and write their score corpus.
    TrainShadows {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 3: fit an attack on shadow scores and evaluate it on target scores.
    Attack {
        #[arg(long)]
        shadow_scores: PathBuf,
        #[arg(long)]
        target_scores: PathBuf,
        #[arg(long, default_value = "threshold")]
        kind: AttackKind,
        /// Where to write the fitted attack as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coupled-run stability estimate and bounds for a trained target.
    Stability {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target_scores: PathBuf,
        /// Where to write the bound report CSV; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form stability and advantage bounds from explicit constants.
    Bounds(BoundsArgs),
    /// Privacy of DP-SGD settings, or the noise needed for target ε values.
    Accountant(AccountantArgs),
    /// Collect run manifests into report tables.
    Report {
        /// Manifest files or directories searched recursively for manifest.json.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// The family × ε × seed sweep, followed by the report.
    Grid {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, value_delimiter = ',', default_values = ["gan", "diffusion"])]
        families: Vec<ModelFamily>,
        #[arg(long, value_delimiter = ',', value_parser = parse_epsilon_arg)]
        epsilons: Vec<f64>,
        /// Skip the non-private GAN cell.
        #[arg(long)]
        skip_nonprivate_gan: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_epsilon_arg(s: &str) -> std::result::Result<f64, String> {
    parse_epsilon(s).map_err(|e| e.to_string())
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((parse(a)?, parse(b)?))
}

/// A config file or preset, then per-field overrides.
#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    family: Option<ModelFamily>,
    #[arg(long, value_parser = parse_epsilon_arg)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    shadows: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    attack: Option<AttackKind>,
    /// Member fraction of each half.
    #[arg(long)]
    members: Option<f64>,
    /// Nonmember fraction of each half.
    #[arg(long)]
    nonmembers: Option<f64>,
    #[arg(long)]
    no_quality: bool,
    #[arg(long)]
    stability: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::preset(&self.preset, ModelFamily::Gan, f64::INFINITY)?,
        };
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field.clone() {
                    c.$($target)+ = v;
                }
            };
        }
        set!(family => family);
        set!(epsilon => epsilon);
        set!(delta => delta);
        set!(seed => seed);
        set!(split_seed => split.seed);
        set!(shadows => shadows);
        set!(batch_size => training.batch_size);
        set!(clip_norm => training.clip_norm);
        set!(attack => attack);
        set!(members => split.members);
        set!(nonmembers => split.nonmembers);
        if let Some(s) = self.steps {
            c.training.steps = s;
            c.training.epochs = None;
        }
        if let Some(e) = self.epochs {
            c.training.epochs = Some(e);
        }
        if let Some(a) = self.learning_rate {
            c.training.learning_rate = dpleak::dp::LearningRate::Constant(a);
        }
        if self.no_quality {
            c.quality.enabled = false;
        }
        if self.stability {
            c.stability.enabled = true;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    family: ModelFamily,
    /// Parameter-Lipschitz constant L of the per-sample loss.
    #[arg(long)]
    lipschitz: f64,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    /// Training-set size m.
    #[arg(long)]
    members: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    learning_rate: f64,
    /// Per-coordinate noise std on the averaged gradient.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Mean loss weight λ̄; defaults to its expectation under the default
    /// noise-level distribution.
    #[arg(long)]
    lambda_bar: Option<f64>,
    /// Residual-norm bound B (diffusion).
    #[arg(long)]
    residual_bound: Option<f64>,
    /// Smallest loss weight (diffusion); defaults to the weight at σ_max.
    #[arg(long)]
    lambda_min: Option<f64>,
    /// Discriminator loss range, as `a,b` (GAN).
    #[arg(long, value_parser = parse_range)]
    loss_range: Option<(f64, f64)>,
    /// Score density bound Q; omitted means unbounded.
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct AccountantArgs {
    /// Noise multipliers to account for.
    #[arg(long, value_delimiter = ',', conflicts_with = "target_epsilon")]
    sigma: Vec<f64>,
    /// Target ε values to calibrate noise for.
    #[arg(long, value_delimiter = ',', value_parser = parse_epsilon_arg)]
    target_epsilon: Vec<f64>,
    /// Sampling rates q = b/m.
    #[arg(long, value_delimiter = ',', required = true)]
    q: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    steps: Vec<usize>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn find_manifests(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_manifests(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "manifest.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn bounds(a: &BoundsArgs) -> Result<BoundReport> {
    let edm = EdmConfig::default();
    let diffusion = a.family == ModelFamily::Diffusion;
    let inputs = BoundInputs {
        l: a.lipschitz,
        c: a.clip_norm,
        m: a.members,
        alpha_sum: a.learning_rate * a.steps as f64,
        steps: a.steps,
        noise_std: a.noise_std,
        lambda_bar: match a.lambda_bar {
            Some(v) => Some(v),
            None if diffusion => Some(lambda_bar_expected(&edm)?),
            None => None,
        },
        residual_bound: a.residual_bound,
        lambda_min: a.lambda_min.or(diffusion.then(|| edm.lambda_min())),
        loss_range: a.loss_range,
        q: a.q,
    };
    BoundReport::compute(a.family, inputs, None)
}

fn accountant(a: &AccountantArgs) -> Result<String> {
    let mut out = String::new();
    if a.target_epsilon.is_empty() {
        if a.sigma.is_empty() {
            return Err(Error::Config("give --sigma or --target-epsilon".into()));
        }
        out.push_str(&format!(
            "{:>10} {:>10} {:>8} {:>8} {:>12} {:>8}\n",
            "sigma", "q", "T", "delta", "epsilon", "order"
        ));
        for &sigma in &a.sigma {
            for &q in &a.q {
                for &steps in &a.steps {
                    let p = epsilon(&MechanismSpec {
                        noise_multiplier: sigma,
                        sampling_rate: q,
                        steps,
                        delta: a.delta,
                    })?;
                    let order = p
                        .order
                        .map(|o| format!("{o}"))
                        .unwrap_or_else(|| "-".into());
                    out.push_str(&format!(
                        "{sigma:>10} {q:>10} {steps:>8} {:>8} {:>12} {order:>8}\n",
                        a.delta,
                        format_epsilon(p.epsilon)
                    ));
                }
            }
        }
    } else {
        out.push_str(&format!(
            "{:>10} {:>10} {:>8} {:>8} {:>12}\n",
            "epsilon", "q", "T", "delta", "sigma"
        ));
        for &eps in &a.target_epsilon {
            for &q in &a.q {
                for &steps in &a.steps {
                    let sigma = if eps.is_infinite() {
                        0.0
                    } else {
                        calibrate_noise(eps, a.delta, q, steps)?
                    };
                    out.push_str(&format!(
                        "{:>10} {q:>10} {steps:>8} {:>8} {sigma:>12.6}\n",
                        format_epsilon(eps),
                        a.delta
                    ));
                }
            }
        }
    }
    Ok(out)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { cfg, out } => {
            let m = run_experiment(&cfg.resolve()?, &out)?;
            println!("{METRICS_CSV_HEADER}\n{}", m.metrics.csv_row());
            if let Some(f) = m.frechet {
                println!("frechet,{f}");
            }
            println!("manifest,{}", out.join("manifest.json").display());
        }
        Command::TrainTarget { cfg, out } => {
            let c = cfg.resolve()?;
            let exp = Experiment::prepare(&c)?;
            let (model, scores) = exp.train_target()?;
            create_dir(&out)?;
            write(&out.join("config.toml"), &c.to_toml()?)?;
            save_model(&model, &out.join("target_model.json"))?;
            write_scores(&scores, &out.join("target_scores.jsonl"))?;
            println!(
                "trained {} target on {} members (σ = {}, ε = {})",
                c.family,
                exp.splits.target.members.len(),
                exp.accountant.noise_multiplier,
                format_epsilon(exp.accountant.achieved_epsilon)
            );
        }
        Command::TrainShadows { cfg, out } => {
            let c = cfg.resolve()?;
            let exp = Experiment::prepare(&c)?;
            let scores = exp.train_shadows()?;
            create_dir(&out)?;
            write_scores(&scores, &out.join("shadow_scores.jsonl"))?;
            println!("trained {} shadows, {} scores", c.shadows, scores.len());
        }
        Command::Attack {
            shadow_scores,
            target_scores,
            kind,
            out,
        } => {
            let attack = fit_attack(&read_scores(&shadow_scores)?, kind)?;
            let metrics = evaluate(&attack, &read_scores(&target_scores)?)?;
            if let Some(p) = out {
                write(&p, &serde_json::to_string_pretty(&attack)?)?;
            }
            println!("{METRICS_CSV_HEADER}\n{}", metrics.csv_row());
        }
        Command::Stability {
            cfg,
            model,
            target_scores,
            out,
        } => {
            let exp = Experiment::prepare(&cfg.resolve()?)?;
            let report = exp.stability(&load_model(&model)?, &read_scores(&target_scores)?)?;
            match out {
                Some(p) => write(&p, &report.to_csv())?,
                None => print!("{}", report.to_csv()),
            }
        }
        Command::Bounds(a) => print!("{}", bounds(&a)?.to_csv()),
        Command::Accountant(a) => print!("{}", accountant(&a)?),
        Command::Report { inputs, out } => {
            let mut paths = Vec::new();
            for p in &inputs {
                find_manifests(p, &mut paths)?;
            }
            let manifests = paths
                .iter()
                .map(|p| RunManifest::load(p))
                .collect::<Result<Vec<_>>>()?;
            let files = emit_report(&manifests, &out)?;
            print!(
                "{}",
                fs::read_to_string(&files.table).map_err(|e| Error::io(&files.table, e))?
            );
        }
        Command::Grid {
            cfg,
            seeds,
            families,
            epsilons,
            skip_nonprivate_gan,
            out,
        } => {
            let spec = GridSpec {
                base: cfg.resolve()?,
                families,
                epsilons: if epsilons.is_empty() {
                    EPSILON_GRID.to_vec()
                } else {
                    epsilons
                },
                seeds,
                skip_nonprivate_gan,
            };
            let manifests = run_grid(&spec, Some(&out))?;
            emit_report(&manifests, &out)?;
            print!("{}", report_table(&summarize(&report_rows(&manifests)?)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numeric => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}

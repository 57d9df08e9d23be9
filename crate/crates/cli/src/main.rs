use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pomdp_spi::behavior::{train_behavior, write_training_log};
use pomdp_spi::envs::by_name;
use pomdp_spi::eval::reference_optimum;
use pomdp_spi::rng::seeded;
use pomdp_spi::spi::{
    estimate_for_window, sufficiency_count, Algorithm, BoundInputs, BoundVariant, SafetyReport,
    SpibbConfig,
};
use pomdp_spi::{
    collect_dataset, rollout_performance, run_experiment, Dataset, EnvSpec, ExperimentConfig, Fsc,
    Pomdp, QLearnConfig,
};

#[derive(Parser)]
#[command(name = "pomdp-spi", version, about = "Offline safe policy improvement for POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a k-window behavior controller with Q-learning and softmax extraction.
    TrainBehavior(TrainArgs),
    /// Collect a trajectory dataset under a behavior controller.
    Collect(CollectArgs),
    /// Compute an improved controller from a dataset.
    Improve(ImproveArgs),
    /// Estimate a controller's performance by rollouts.
    Evaluate(EvaluateArgs),
    /// Evaluate the safety bound, its epsilon and the sufficiency count.
    Bound(BoundArgs),
    /// Run the experiment grid.
    Experiment(ExperimentArgs),
    /// Write an environment model as JSON.
    ExportEnv(ExportArgs),
}

#[derive(Args)]
struct EnvArg {
    /// cheesemaze, tiger, voicemail or file:<path>
    #[arg(long, default_value = "tiger")]
    env: String,
}

impl EnvArg {
    fn load(&self) -> Result<EnvSpec> {
        match self.env.strip_prefix("file:") {
            Some(path) => {
                let pomdp = Pomdp::load(path).with_context(|| format!("loading {path}"))?;
                let name = Path::new(path)
                    .file_stem()
                    .map_or("custom".into(), |s| s.to_string_lossy().into_owned());
                Ok(EnvSpec::from_pomdp(name, pomdp)?)
            }
            None => Ok(by_name(&self.env)?),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    env: EnvArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 5000)]
    episodes: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha0: f64,
    #[arg(long, default_value_t = 0.5)]
    epsilon0: f64,
    #[arg(long, default_value_t = 0.002)]
    lambda: f64,
    #[arg(long, default_value_t = pomdp_spi::DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// Softmax temperature; the environment default when omitted.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for behavior.json, qtable.json and training_log.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    env: EnvArg,
    /// Behavior controller JSON.
    #[arg(long)]
    behavior: PathBuf,
    #[arg(long)]
    trajectories: usize,
    #[arg(long, default_value_t = pomdp_spi::DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem; writes <out>.csv and <out>.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImproveArgs {
    #[command(flatten)]
    env: EnvArg,
    #[arg(long)]
    behavior: PathBuf,
    /// Dataset stem (<stem>.csv with optional <stem>.json).
    #[arg(long)]
    dataset: PathBuf,
    /// spibb or basicrl
    #[arg(long, default_value = "spibb")]
    algorithm: String,
    #[arg(long, default_value_t = 20)]
    n_wedge: u64,
    /// Window of the improved controller; the behavior window when omitted.
    #[arg(long)]
    k_prime: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// R_max / (1 - gamma) when omitted.
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for improved.json and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    env: EnvArg,
    /// Controller JSON.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Evaluate the greedy controller of the exact finite-history MDP at this window instead.
    #[arg(long)]
    reference_window: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    #[arg(long, default_value_t = pomdp_spi::DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    /// finite-history or history
    #[arg(long, default_value = "finite-history")]
    variant: String,
    /// |N x Z|, or the history-count proxy for the history variant.
    #[arg(long)]
    state_count: usize,
    #[arg(long)]
    action_count: usize,
    #[arg(long)]
    obs_count: usize,
    #[arg(long)]
    n_wedge: u64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    v_max: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    rho_improved: f64,
    #[arg(long, default_value_t = 0.0)]
    rho_behavior: f64,
    /// Target loss for the sufficiency count; the computed zeta when omitted.
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    env: EnvArg,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, value_delimiter = ',')]
    k_prime_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n_wedge_grid: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    trajectory_grid: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    qlearn_episodes: usize,
    #[arg(long)]
    tau: Option<f64>,
    /// Fixed behavior controller JSON instead of training one.
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// 500 repetitions, 10000 evaluation episodes and 13 dataset sizes.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    env: EnvArg,
    #[arg(long)]
    out: PathBuf,
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let env = a.env.load()?;
    let cfg = QLearnConfig {
        k: a.k,
        episodes: a.episodes,
        alpha0: a.alpha0,
        epsilon0: a.epsilon0,
        lambda: a.lambda,
        max_steps: a.max_steps,
        seed: a.seed,
    };
    let tau = a.tau.unwrap_or_else(|| env.softmax_tau());
    let (fsc, q, log) = train_behavior(&env, &cfg, tau, &mut seeded(a.seed))?;
    std::fs::create_dir_all(&a.out)?;
    fsc.save(a.out.join("behavior.json"))?;
    q.save(a.out.join("qtable.json"))?;
    write_training_log(&log, std::fs::File::create(a.out.join("training_log.csv"))?)?;
    let tail = &log[log.len().saturating_sub(100)..];
    let recent = tail.iter().map(|l| l.discounted_return).sum::<f64>() / tail.len().max(1) as f64;
    emit(
        &json!({ "env": env.name, "k": a.k, "tau": tau, "episodes": a.episodes, "recent_mean_return": recent }),
        None,
    )
}

fn collect(a: CollectArgs) -> Result<()> {
    let env = a.env.load()?;
    let behavior = Fsc::load(&a.behavior).with_context(|| format!("loading {}", a.behavior.display()))?;
    let mut d = collect_dataset(&env, &behavior, a.trajectories, a.max_steps, a.seed)?;
    d.meta.behavior_id = a.behavior.display().to_string();
    d.save(&a.out)?;
    emit(
        &json!({ "trajectories": d.episodes.len(), "steps": d.num_steps(), "out": a.out.with_extension("csv") }),
        None,
    )
}

fn improve(a: ImproveArgs) -> Result<()> {
    let env = a.env.load()?;
    let behavior = Fsc::load(&a.behavior).with_context(|| format!("loading {}", a.behavior.display()))?;
    let dataset = Dataset::load(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    let algorithm: Algorithm = a.algorithm.parse()?;
    let Some(k) = behavior.window() else {
        bail!("behavior controller is not a k-window controller");
    };
    let k_prime = a.k_prime.unwrap_or(k);
    let cfg = SpibbConfig {
        delta: a.delta,
        v_max: a.v_max.unwrap_or_else(|| env.v_max()),
        ..SpibbConfig::for_env(&env, a.n_wedge, k_prime)
    };
    let estimate = estimate_for_window(&dataset, &behavior, k_prime, env.pomdp.discount)?;
    let (policy, report) = estimate.improve(algorithm, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    policy.save(a.out.join("improved.json"))?;
    let value = serde_json::to_value(&report)?;
    emit(&value, Some(&a.out.join("report.json")))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let env = a.env.load()?;
    let (mean, stderr) = match (&a.policy, a.reference_window) {
        (Some(path), None) => {
            let policy = Fsc::load(path).with_context(|| format!("loading {}", path.display()))?;
            rollout_performance(&env, &policy, a.episodes, a.max_steps, a.seed)?
        }
        (None, Some(k)) => {
            let r = reference_optimum(&env, k, a.episodes, a.max_steps, a.seed)?;
            (r.rho, r.stderr)
        }
        _ => bail!("pass exactly one of --policy and --reference-window"),
    };
    emit(
        &json!({ "env": env.name, "episodes": a.episodes, "mean": mean, "stderr": stderr }),
        a.out.as_deref(),
    )
}

fn bound(a: BoundArgs) -> Result<()> {
    let variant = match a.variant.as_str() {
        "finite-history" => BoundVariant::FiniteHistory,
        "history" => BoundVariant::History,
        other => bail!("unknown bound variant {other:?}"),
    };
    let report = SafetyReport::from_inputs(BoundInputs {
        variant,
        state_count: a.state_count,
        action_count: a.action_count,
        obs_count: a.obs_count,
        n_wedge: a.n_wedge,
        delta: a.delta,
        v_max: a.v_max,
        gamma: a.gamma,
        rho_improved_mle: a.rho_improved,
        rho_behavior_mle: a.rho_behavior,
    })?;
    let target = a.zeta.or(report.zeta).filter(|z| *z > 0.0);
    let sufficiency = target
        .map(|z| sufficiency_count(z, a.delta, a.state_count, a.action_count, a.obs_count, a.v_max, a.gamma))
        .transpose()?;
    let mut value = serde_json::to_value(&report)?;
    value["sufficiency_count"] = json!(sufficiency);
    value["sufficiency_zeta"] = json!(target);
    emit(&value, a.out.as_deref())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let env = a.env.load()?;
    let mut cfg = if a.full_scale {
        ExperimentConfig::full_scale(env, a.k)
    } else {
        ExperimentConfig::desk(env, a.k)
    };
    if let Some(g) = a.k_prime_grid {
        cfg.k_prime_grid = g;
    }
    if let Some(g) = a.n_wedge_grid {
        cfg.n_wedge_grid = g;
    }
    if let Some(g) = a.trajectory_grid {
        cfg.trajectory_grid = g;
    }
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    if let Some(e) = a.eval_episodes {
        cfg.eval_episodes = e;
        cfg.reference_episodes = e;
    }
    if let Some(v) = a.v_max {
        cfg.v_max = v;
    }
    if let Some(t) = a.tau {
        cfg.tau = t;
    }
    if let Some(path) = &a.behavior {
        cfg.behavior = Some(Fsc::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    cfg.qlearn.episodes = a.qlearn_episodes;
    cfg.delta = a.delta;
    cfg.k_max = a.k_max;
    cfg.threads = a.threads;
    cfg.seed = a.seed;
    cfg.output = Some(a.out.clone());
    let report = run_experiment(&cfg)?;
    let errors = report.rows.iter().filter(|r| !r.error.is_empty()).count();
    emit(
        &json!({
            "rows": report.rows.len(),
            "errors": errors,
            "behavior_rho": report.behavior_rho,
            "max_rho": report.max_rho,
            "out": a.out,
        }),
        None,
    )
}

fn export_env(a: ExportArgs) -> Result<()> {
    let env = a.env.load()?;
    env.pomdp.save(&a.out)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainBehavior(a) => train(a),
        Command::Collect(a) => collect(a),
        Command::Improve(a) => improve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bound(a) => bound(a),
        Command::Experiment(a) => experiment(a),
        Command::ExportEnv(a) => export_env(a),
    }
}

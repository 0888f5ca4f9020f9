//! The `gridflux` command line.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::algos::Trainer;
use crate::baselines::{ecs_evaluate, ecs_plan, evaluate_policy, Demand, UniformRandom, ZeroDelay};
use crate::config::{load_config, Algo, CriticMode, EnvConfig, PriceMode, TrainConfig};
use crate::error::{GridError, Result};
use crate::metrics::{read_metrics, wall_clock_label, write_energy_profiles, write_metrics, IterationMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gridflux", version, about = "Microgrid demand-side scheduling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train household agents and log per-iteration metrics.
    Train(TrainArgs),
    /// Evaluate the zero-delay or uniform-random policy.
    Baseline(BaselineArgs),
    /// Plan with the day-ahead scheduler and replay it against demand.
    Ecs(EcsArgs),
    /// Align metric files and emit per-metric ratios against the first.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoChoice {
    /// PPO with the centralized critic.
    Mappo,
    /// PPO with per-household critics.
    Dppo,
    /// Advantage actor-critic with per-household critics.
    A2c,
}

impl AlgoChoice {
    pub fn apply(self, cfg: &mut TrainConfig) {
        let (algo, critic) = match self {
            AlgoChoice::Mappo => (Algo::Ppo, CriticMode::Central),
            AlgoChoice::Dppo => (Algo::Ppo, CriticMode::Decentral),
            AlgoChoice::A2c => (Algo::A2c, CriticMode::Decentral),
        };
        cfg.algo = algo;
        cfg.critic_mode = critic;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    Zero,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file; documented defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of one run; repeat for several runs.
    #[arg(long = "seed", required = true)]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, env = "GRIDFLUX_OUT", default_value = "gridflux-out")]
    pub out_dir: PathBuf,
    /// Constraint weight w of the energy term in the reward.
    #[arg(long)]
    pub w: Option<f64>,
    /// Drop time of day from the observations.
    #[arg(long)]
    pub no_time_obs: bool,
    /// Drop the previous price from the observations.
    #[arg(long)]
    pub no_price_obs: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub algo: AlgoChoice,
    #[arg(long)]
    pub iterations: usize,
    /// Pair households (0,1), (2,3), ... onto shared policy networks.
    #[arg(long)]
    pub share_policies: bool,
    /// Run each seed in its own child process.
    #[arg(long)]
    pub parallel_seeds: bool,
    /// Set by the parent of a parallel run.
    #[arg(long, hide = true)]
    pub no_manifest: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub policy: PolicyChoice,
    /// Simulated days per evaluation.
    #[arg(long, default_value_t = 105)]
    pub days: usize,
    /// Emit one row per training-sized batch, using the rollout seeds a
    /// training run would use, instead of a single row over `--days`.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EcsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub days: usize,
    /// Replay against demand equal to each household's plan.
    #[arg(long)]
    pub deterministic_demand: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Metric files; the first is the reference.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    pub env_config: EnvConfig,
    pub train_config: Option<TrainConfig>,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub artifacts: Vec<PathBuf>,
    /// SHA-256 over the canonical JSON of the resolved configurations.
    pub config_hash: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, env: &EnvConfig, train: Option<&TrainConfig>, seeds: &[u64]) -> Self {
        let canonical = serde_json::to_string(&(env, train)).expect("configs serialize");
        RunManifest {
            command_line: std::env::args().collect(),
            subcommand: subcommand.into(),
            env_config: env.clone(),
            train_config: train.cloned(),
            seeds: seeds.to_vec(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            artifacts: Vec::new(),
            config_hash: hex::encode(Sha256::digest(canonical.as_bytes())),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| GridError::io(&path, e))?;
        Ok(path)
    }
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn profile_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("energy_profile_seed{seed}.csv"))
}

fn resolve_configs(common: &Common) -> Result<(EnvConfig, TrainConfig)> {
    let (mut env, train) = match &common.config {
        Some(p) => load_config(p)?,
        None => (EnvConfig::default(), TrainConfig::default()),
    };
    if let Some(w) = common.w {
        env.constraint_weight = w;
    }
    if common.no_time_obs {
        env.observation.include_time = false;
    }
    if common.no_price_obs {
        env.observation.include_price = false;
    }
    env.validate()?;
    Ok((env, train))
}

/// Removes stale per-seed files so appends start from a fresh header.
fn fresh(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(GridError::io(path, e)),
    }
}

fn train_seed(env: &EnvConfig, cfg: &TrainConfig, iterations: usize, seed: u64, out: &Path) -> Result<()> {
    let metrics = metrics_path(out, seed);
    let profile = profile_path(out, seed);
    fresh(&metrics)?;
    fresh(&profile)?;
    write_metrics(&metrics, &[])?;
    write_energy_profiles(&profile, &[])?;
    let mut trainer = Trainer::new(env.clone(), cfg.clone(), seed)?;
    let ckpt = out.join("checkpoints").join(format!("seed{seed}"));
    trainer.train(iterations, Some(&ckpt), |_, r| {
        let m = &r.metrics;
        info!(
            "seed {seed} iteration {}: reward/day {:.4} cost/day {:.4} par {:.3} ({:.1}s)",
            m.iteration, m.avg_reward_per_day, m.avg_cost_per_day, m.par, m.wall_time
        );
        write_metrics(&metrics, std::slice::from_ref(m))?;
        write_energy_profiles(&profile, std::slice::from_ref(&r.profile))
    })?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (env, mut cfg) = resolve_configs(&args.common)?;
    args.algo.apply(&mut cfg);
    if args.share_policies {
        cfg.share_policies = TrainConfig::pairwise_sharing(env.n_households);
    }
    cfg.validate(env.n_households)?;
    // Surface configuration problems before anything is written.
    Trainer::new(env.clone(), cfg.clone(), args.common.seeds[0])?;

    let out = &args.common.out_dir;
    let seeds = &args.common.seeds;
    if !args.no_manifest {
        let mut manifest = RunManifest::new("train", &env, Some(&cfg), seeds);
        for &s in seeds {
            manifest.artifacts.push(metrics_path(out, s));
            manifest.artifacts.push(profile_path(out, s));
            manifest.artifacts.push(out.join("checkpoints").join(format!("seed{s}")));
        }
        manifest.write(out)?;
    }

    if args.parallel_seeds && seeds.len() > 1 {
        return run_children(seeds);
    }
    for &s in seeds {
        train_seed(&env, &cfg, args.iterations, s, out)?;
    }
    Ok(())
}

/// Re-runs this command once per seed in child processes and waits for all.
fn run_children(seeds: &[u64]) -> Result<()> {
    let exe = std::env::current_exe().map_err(|e| GridError::io("current executable", e))?;
    let mut base: Vec<OsString> = Vec::new();
    let mut args = std::env::args_os().skip(1).peekable();
    while let Some(a) = args.next() {
        if a == "--seed" {
            args.next();
        } else if a.to_string_lossy().starts_with("--seed=") || a == "--parallel-seeds" {
        } else {
            base.push(a);
        }
    }
    let children = seeds
        .iter()
        .map(|s| {
            Command::new(&exe)
                .args(&base)
                .args(["--no-manifest", "--seed", &s.to_string()])
                .spawn()
                .map_err(|e| GridError::io(&exe, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut failed = Vec::new();
    for (child, s) in children.into_iter().zip(seeds) {
        let status = child.wait_with_output().map_err(|e| GridError::io(&exe, e))?.status;
        if !status.success() {
            failed.push(format!("seed {s} ({status})"));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(GridError::Diverged {
            iteration: 0,
            stage: format!("child runs failed: {}", failed.join(", ")),
        })
    }
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let (env, cfg) = resolve_configs(&args.common)?;
    if args.days == 0 {
        return Err(GridError::Config("--days must be >= 1".into()));
    }
    let m = env.n_appliances();
    let zero = ZeroDelay { n_appliances: m };
    let random = UniformRandom {
        n_appliances: m,
        max_delay: env.step_hours,
    };
    let policy: &dyn crate::rollout::AgentPolicy = match args.policy {
        PolicyChoice::Zero => &zero,
        PolicyChoice::Random => &random,
    };
    let out = &args.common.out_dir;
    let seeds = &args.common.seeds;
    let mut manifest = RunManifest::new("baseline", &env, Some(&cfg), seeds);
    for &s in seeds {
        manifest.artifacts.push(metrics_path(out, s));
        manifest.artifacts.push(profile_path(out, s));
    }
    manifest.write(out)?;
    for &s in seeds {
        let (mp, pp) = (metrics_path(out, s), profile_path(out, s));
        fresh(&mp)?;
        fresh(&pp)?;
        let runs: Vec<(usize, usize, u64)> = match args.iterations {
            Some(k) => (0..k)
                .map(|i| (i, cfg.batch_steps, Trainer::rollout_seed(s, i)))
                .collect(),
            None => vec![(0, args.days * env.intervals_per_day, s)],
        };
        let mut rows = Vec::new();
        let mut profiles = Vec::new();
        for (i, steps, rs) in runs {
            let started = std::time::Instant::now();
            let (mut metrics, profile, _) = evaluate_policy(&env, policy, steps, rs, i)?;
            metrics.seed = s;
            metrics.wall_time = started.elapsed().as_secs_f64();
            rows.push(metrics);
            profiles.push(profile);
        }
        write_metrics(&mp, &rows)?;
        write_energy_profiles(&pp, &profiles)?;
        info!("baseline {:?} seed {s}: {} rows", args.policy, rows.len());
    }
    Ok(())
}

pub fn cmd_ecs(args: &EcsArgs) -> Result<()> {
    let (env, _) = resolve_configs(&args.common)?;
    if env.price_mode != PriceMode::Quadratic {
        return Err(GridError::Config(
            "ecs requires price_mode = \"quadratic\" in [env]".into(),
        ));
    }
    if args.days == 0 {
        return Err(GridError::Config("--days must be >= 1".into()));
    }
    let plans = ecs_plan(&env)?;
    let out = &args.common.out_dir;
    let seeds = &args.common.seeds;
    let mut manifest = RunManifest::new("ecs", &env, None, seeds);
    let schedule_path = out.join("schedule.csv");
    manifest.artifacts.push(schedule_path.clone());
    for &s in seeds {
        manifest.artifacts.push(metrics_path(out, s));
        manifest.artifacts.push(profile_path(out, s));
    }
    manifest.write(out)?;

    let mut text = String::from("household,interval_index,wall_clock_label,planned_kwh\n");
    for (n, plan) in plans.iter().enumerate() {
        for (h, e) in plan.energy.iter().enumerate() {
            let _ = writeln!(text, "{n},{h},{},{e}", wall_clock_label(h, env.step_hours));
        }
    }
    std::fs::write(&schedule_path, text).map_err(|e| GridError::io(&schedule_path, e))?;

    for &s in seeds {
        let demand = if args.deterministic_demand {
            Demand::Fixed(plans.iter().map(|p| p.energy.clone()).collect())
        } else {
            Demand::Stochastic { seed: s }
        };
        let started = std::time::Instant::now();
        let mut ev = ecs_evaluate(&plans, &env, args.days, &demand)?;
        ev.metrics.seed = s;
        ev.metrics.wall_time = started.elapsed().as_secs_f64();
        let (mp, pp) = (metrics_path(out, s), profile_path(out, s));
        fresh(&mp)?;
        fresh(&pp)?;
        write_metrics(&mp, std::slice::from_ref(&ev.metrics))?;
        write_energy_profiles(&pp, std::slice::from_ref(&ev.profile))?;
        info!(
            "ecs seed {s}: reward/day {:.4} (planned {:.4})",
            ev.metrics.avg_reward_per_day, ev.planned_reward
        );
    }
    Ok(())
}

pub const COMPARE_HEADER: &str = "iteration,series,metric,value,reference_value,ratio";

const COMPARED: [(&str, fn(&IterationMetrics) -> f64); 5] = [
    ("avg_reward_per_day", |m| m.avg_reward_per_day),
    ("avg_cost_per_day", |m| m.avg_cost_per_day),
    ("avg_energy_per_day", |m| m.avg_energy_per_day),
    ("par", |m| m.par),
    ("tasks_completed_pct", |m| m.tasks_completed_pct),
];

/// Long-format comparison of every input against the first. Files of
/// different lengths are aligned on the shortest common prefix.
pub fn compare_metrics(inputs: &[PathBuf]) -> Result<(String, bool)> {
    if inputs.len() < 2 {
        return Err(GridError::Config("compare needs at least two --input files".into()));
    }
    let tables = inputs
        .iter()
        .map(read_metrics)
        .collect::<Result<Vec<_>>>()?;
    let rows = tables.iter().map(Vec::len).min().unwrap_or(0);
    let truncated = tables.iter().any(|t| t.len() != rows);
    let reference = &tables[0];
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (path, table) in inputs.iter().zip(&tables) {
        let series = path.display().to_string();
        for (row, base) in table.iter().zip(reference).take(rows) {
            for (name, get) in COMPARED {
                let (v, r) = (get(row), get(base));
                let ratio = if r != 0.0 { v / r } else if v == 0.0 { 1.0 } else { f64::NAN };
                let _ = writeln!(out, "{},{series},{name},{v},{r},{ratio}", row.iteration);
            }
        }
    }
    Ok((out, truncated))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let (text, truncated) = compare_metrics(&args.inputs)?;
    if truncated {
        warn!("metric files differ in length; compared on the shortest common prefix");
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
    }
    std::fs::write(&args.out, text).map_err(|e| GridError::io(&args.out, e))
}

pub fn exit_code(err: &GridError) -> i32 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Baseline(a) => cmd_baseline(a),
        Cmd::Ecs(a) => cmd_ecs(a),
        Cmd::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

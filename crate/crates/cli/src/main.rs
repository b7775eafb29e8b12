//! `qlp`: build buffers, run the LP policy/value iteration experiments,
//! query the Riccati oracle and roll out learned policies.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use qlp_core::algorithms::{RunOutcome, StopRule};
use qlp_core::experiment::{
    load_learned, preset, run_experiment, write_artifacts, write_rollout_csv, ExperimentConfig,
    DEFAULT_HORIZON, PRESET_NAMES,
};
use qlp_core::oracle::{rollout_cost, solve_discounted_dare};
use qlp_core::replay::build_buffer;
use qlp_core::systems::{CostKind, LtiPlant};

#[derive(Parser)]
#[command(
    name = "qlp",
    version,
    about = "Data-driven LP policy and value iteration experiments",
    after_help = "Run directories default to $QLP_OUTPUT_DIR/<preset>-seed<seed> (QLP_OUTPUT_DIR defaults to ./runs)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the benchmark presets, or print one as JSON.
    Presets {
        /// Print this preset's full configuration.
        #[arg(long)]
        show: Option<String>,
    },
    /// Build a replay buffer and write it as CSV.
    Buffer {
        #[command(flatten)]
        source: Source,
        /// Output file; defaults to buffer.csv in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment and write its artifacts.
    Run {
        #[command(flatten)]
        source: Source,
        /// Additional seeds; each gets its own run directory.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Run directory (single seed only).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, value_enum)]
        stop_rule: Option<StopRuleArg>,
        /// Round-off allowance of the stop rule in units of machine epsilon; 0
        /// compares against epsilon alone.
        #[arg(long)]
        roundoff_ulps: Option<f64>,
        /// Add diagonal-dominance rows at this level to every LP.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Solve the discounted Riccati equation of an LTI plant; prints JSON.
    Oracle {
        #[arg(long, default_value = "lti4d")]
        plant: String,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        /// Take plant, cost and discount from this experiment config instead.
        #[arg(long, conflicts_with_all = ["plant"])]
        config: Option<PathBuf>,
    },
    /// Simulate the greedy policy of a finished run.
    Rollout {
        /// Run directory holding config.json and summary.json.
        #[arg(long, conflicts_with_all = ["preset", "config"])]
        run_dir: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        /// Initial state, comma separated; defaults to the config's.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Trajectory CSV; defaults to rollout.csv in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    /// One of the benchmark presets (see `qlp presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Experiment config in JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Buffer seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StopRuleArg {
    BufferQ,
    ParameterNorm,
}

impl From<StopRuleArg> for StopRule {
    fn from(r: StopRuleArg) -> Self {
        match r {
            StopRuleArg::BufferQ => StopRule::BufferQ,
            StopRuleArg::ParameterNorm => StopRule::ParameterNorm,
        }
    }
}

fn load_source(preset_name: Option<&str>, config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match (preset_name, config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        _ => bail!("give exactly one of --preset or --config"),
    };
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Presets { show } => {
            match show {
                Some(name) => println!("{}", serde_json::to_string_pretty(&preset(&name)?)?),
                None => PRESET_NAMES.iter().for_each(|n| println!("{n}")),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Buffer { source, out } => {
            let cfg = load_source(source.preset.as_deref(), source.config.as_deref(), source.seed)?;
            let prepared = cfg.prepare()?;
            let buffer = build_buffer(
                prepared.plant.as_ref(),
                &prepared.cost,
                &cfg.buffer.state_sampler,
                &cfg.buffer.action_sampler,
                cfg.buffer.size,
                cfg.buffer.seed,
            )?;
            let path = out.unwrap_or_else(|| cfg.run_dir().join("buffer.csv"));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            buffer.save(&path)?;
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            source,
            seeds,
            out,
            epsilon,
            max_iters,
            stop_rule,
            roundoff_ulps,
            tau,
        } => {
            let mut cfg = load_source(source.preset.as_deref(), source.config.as_deref(), source.seed)?;
            if let Some(e) = epsilon {
                cfg.run.epsilon = e;
            }
            if let Some(n) = max_iters {
                cfg.run.max_iters = n;
            }
            if let Some(r) = stop_rule {
                cfg.run.stop_rule = r.into();
            }
            if let Some(u) = roundoff_ulps {
                cfg.run.roundoff_ulps = u;
            }
            if tau.is_some() {
                cfg.run.tau = tau;
            }
            let mut configs = vec![cfg.clone()];
            configs.extend(seeds.iter().filter(|&&s| s != cfg.seed()).map(|&s| cfg.clone().with_seed(s)));
            if let Some(dir) = out {
                if configs.len() > 1 {
                    bail!("--out names a single run directory; drop it to run several seeds");
                }
                configs[0].output_dir = Some(dir);
            }
            for c in &configs {
                c.prepare()?;
            }
            let results: Vec<Result<bool>> = std::thread::scope(|scope| {
                let handles: Vec<_> = configs.iter().map(|c| scope.spawn(move || run_one(c))).collect();
                handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
            });
            let mut ok = true;
            for r in results {
                ok &= r?;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Oracle { plant, gamma, config } => {
            let (lti, e, f, gamma) = match config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(&path)?;
                    if cfg.cost.kind != CostKind::Quadratic {
                        bail!("the Riccati oracle needs a quadratic cost");
                    }
                    let lti = cfg.plant.lti()?.context("the Riccati oracle needs an LTI plant")?;
                    let cost = cfg.cost.build(lti.a().nrows(), lti.b().ncols())?;
                    (lti, cost.e().clone(), cost.f().clone(), cfg.run.gamma)
                }
                None => {
                    let lti = match plant.as_str() {
                        "lti4d" => LtiPlant::benchmark_4d(),
                        other => bail!("unknown LTI plant '{other}' (use --config for custom plants)"),
                    };
                    let (n, m) = (lti.a().nrows(), lti.b().ncols());
                    (lti, nalgebra::DMatrix::identity(n, n), nalgebra::DMatrix::identity(m, m), gamma)
                }
            };
            let dare = solve_discounted_dare(lti.a(), lti.b(), &e, &f, gamma, 1e-14, 1_000_000)?;
            let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
                (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
            };
            let json = serde_json::json!({
                "gamma": gamma,
                "p": rows(&dare.p),
                "pq": rows(&dare.pq),
                "k": rows(&dare.k),
                "residual": dare.residual,
                "iterations": dare.iterations,
            });
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Rollout {
            run_dir,
            source,
            x0,
            horizon,
            out,
        } => {
            let dir = match run_dir {
                Some(d) => d,
                None => load_source(source.preset.as_deref(), source.config.as_deref(), source.seed)?.run_dir(),
            };
            let (cfg, params) = load_learned(&dir).with_context(|| format!("loading run from {}", dir.display()))?;
            let prepared = cfg.prepare()?;
            let policy = params.greedy()?;
            let x0 = x0
                .or_else(|| cfg.rollout.as_ref().map(|r| r.x0.clone()))
                .context("no initial state: pass --x0")?;
            let horizon = horizon
                .or_else(|| cfg.rollout.as_ref().map(|r| r.horizon))
                .unwrap_or(DEFAULT_HORIZON);
            let x0 = DVector::from_vec(x0);
            let rollout = rollout_cost(prepared.plant.as_ref(), &prepared.cost, &policy, &x0, cfg.run.gamma, horizon)?;
            let path = out.unwrap_or_else(|| dir.join("rollout.csv"));
            write_rollout_csv(&path, &rollout.states, &rollout.inputs)?;
            let last = rollout.states.last().expect("horizon >= 1");
            let json = serde_json::json!({
                "cost": rollout.cost,
                "final_state": last,
                "final_state_norm": last.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
                "trajectory": path,
            });
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Runs one config, writes its directory and prints a one-line report.
/// Returns whether the run met its stop rule.
fn run_one(cfg: &ExperimentConfig) -> Result<bool> {
    let result = run_experiment(cfg)?;
    let dir = write_artifacts(&result, &cfg.run_dir())?;
    let s = &result.summary;
    let status = match &s.outcome {
        RunOutcome::Converged => "converged".to_string(),
        RunOutcome::MaxIterations => "max_iters reached".to_string(),
        RunOutcome::Failed { stage, message } => format!("failed at {stage}: {message}"),
    };
    let oracle = s
        .oracle
        .as_ref()
        .map(|o| format!(", oracle errors P {:.2e} p {:.2e} s {:.2e}", o.error.p, o.error.lin, o.error.s))
        .unwrap_or_default();
    println!(
        "{} seed {}: {status} after {} LPs{oracle} -> {}",
        s.name,
        s.seed,
        s.iterations,
        dir.display()
    );
    if let RunOutcome::Failed { stage, .. } = &s.outcome {
        eprintln!("{}: run failed at stage '{stage}'", s.name);
    }
    Ok(s.converged)
}

//! Experiment configurations, the benchmark presets, and the on-disk layout
//! of a run.
//!
//! A run directory holds `config.json`, `buffer.csv`, `trace.csv`,
//! `summary.json`, `rollout.csv` (when a rollout was requested and
//! succeeded) and `plot.py`. The config and buffer are enough to replay the
//! run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    bellman_residual, run, BlockDiff, InitialPolicy, InitialQ, IterationTrace, RunConfig, RunOutcome,
    StopRule, DEFAULT_MAX_ITERS, DEFAULT_ROUNDOFF_ULPS,
};
use crate::basis::{BasisFamily, BasisKind, MomentSpec, QParams};
use crate::error::{check_dim, Error, Result};
use crate::lp::AlgorithmTag;
use crate::oracle::{qfun_error, rollout_cost, solve_discounted_dare, DareSolution, QError, Rollout};
use crate::replay::{build_buffer, ReplayBuffer, SamplerSpec};
use crate::systems::{CostKind, LtiPlant, Nonlinear2d, Plant, WeightedCost};

/// Environment variable naming the root under which run directories go.
pub const OUTPUT_ENV: &str = "QLP_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_HORIZON: usize = 60;

pub const PRESET_NAMES: [&str; 9] = [
    "lti4d-pi",
    "lti4d-vi-a",
    "lti4d-vi-b",
    "nl2d-quad-pi",
    "nl2d-quad-vi-a",
    "nl2d-quad-vi-b",
    "nl2d-nonquad-pi",
    "nl2d-nonquad-vi-a",
    "nl2d-nonquad-vi-b",
];

const LTI_PI_GAIN: [f64; 4] = [-0.9, -0.7, -0.5, -0.1];
const NL_PI_GAIN: [f64; 4] = [-1.5, 0.5, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSpec {
    /// The four-state, one-input LTI benchmark.
    Lti4d,
    /// The two-state trigonometric benchmark.
    Nonlinear2d,
    /// Any LTI plant, matrices given row by row.
    Lti { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl PlantSpec {
    pub fn lti(&self) -> Result<Option<LtiPlant>> {
        match self {
            Self::Lti4d => Ok(Some(LtiPlant::benchmark_4d())),
            Self::Nonlinear2d => Ok(None),
            Self::Lti { a, b } => LtiPlant::new(matrix(a, "A")?, matrix(b, "B")?).map(Some),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Plant>> {
        Ok(match self.lti()? {
            Some(p) => Box::new(p),
            None => Box::new(Nonlinear2d),
        })
    }
}

/// Stage cost with optional weights; identity when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub kind: CostKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Vec<f64>>>,
}

impl CostSpec {
    pub fn identity(kind: CostKind) -> Self {
        Self { kind, e: None, f: None }
    }

    pub fn build(&self, n: usize, m: usize) -> Result<WeightedCost> {
        let e = match &self.e {
            Some(e) => matrix(e, "E")?,
            None => DMatrix::identity(n, n),
        };
        let f = match &self.f {
            Some(f) => matrix(f, "F")?,
            None => DMatrix::identity(m, m),
        };
        check_dim("state weight E", n, e.nrows())?;
        check_dim("input weight F", m, f.nrows())?;
        WeightedCost::new(self.kind, e, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSpec {
    pub size: usize,
    pub state_sampler: SamplerSpec,
    pub action_sampler: SamplerSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSpec {
    pub x0: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub plant: PlantSpec,
    pub cost: CostSpec,
    pub basis: BasisKind,
    pub buffer: BufferSpec,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<RolloutSpec>,
    /// Run directory; derived from the name and seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Everything built from a validated config before any LP is solved.
pub struct Prepared {
    pub plant: Box<dyn Plant>,
    pub cost: WeightedCost,
    pub family: BasisFamily,
}

impl ExperimentConfig {
    /// Checks cross-field consistency and builds the plant, cost and basis.
    pub fn prepare(&self) -> Result<Prepared> {
        let plant = self.plant.build()?;
        let (n, m) = (plant.state_dim(), plant.input_dim());
        let cost = self.cost.build(n, m)?;
        if self.basis == BasisKind::Quartic && n != 2 {
            return Err(Error::Config(format!(
                "the quartic family is only set up for two states, plant has {n}"
            )));
        }
        let family = BasisFamily::new(self.basis, n, m)?;
        if self.buffer.size == 0 {
            return Err(Error::Config("buffer size must be positive".into()));
        }
        self.buffer.state_sampler.validate()?;
        self.buffer.action_sampler.validate()?;
        check_dim("state sampler", n, self.buffer.state_sampler.dimension)?;
        check_dim("action sampler", m, self.buffer.action_sampler.dimension)?;
        self.run.validate(&family)?;
        let initial_q = self.run.initial_q.as_ref().map(|q| q.build(&family)).transpose()?;
        self.run.initial_policy.build(&family, initial_q.as_ref())?;
        if let Some(r) = &self.rollout {
            check_dim("rollout x0", n, r.x0.len())?;
            if r.horizon == 0 {
                return Err(Error::Config("rollout horizon must be at least 1".into()));
            }
        }
        Ok(Prepared { plant, cost, family })
    }

    pub fn seed(&self) -> u64 {
        self.buffer.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.buffer.seed = seed;
        self
    }

    /// `output_dir`, or `<root>/<name>-seed<seed>` with the root taken from
    /// the environment.
    pub fn run_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        output_root().join(format!("{}-seed{}", self.name, self.seed()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

fn lti_base(name: &str, algorithm: AlgorithmTag, initial_policy: InitialPolicy, initial_q: Option<InitialQ>) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        plant: PlantSpec::Lti4d,
        cost: CostSpec::identity(CostKind::Quadratic),
        basis: BasisKind::ExtendedQuadratic,
        buffer: BufferSpec {
            size: 7000,
            state_sampler: SamplerSpec::uniform(-5.0, 5.0, 4),
            action_sampler: SamplerSpec::gaussian(0.0, 9.0, 1),
            seed: DEFAULT_SEED,
        },
        run: RunConfig {
            algorithm,
            gamma: 0.9,
            epsilon: 1e-13,
            max_iters: DEFAULT_MAX_ITERS,
            stop_rule: StopRule::BufferQ,
            initial_policy,
            initial_q,
            moments: MomentSpec::standard(5),
            tau: None,
            roundoff_ulps: DEFAULT_ROUNDOFF_ULPS,
        },
        rollout: Some(RolloutSpec {
            x0: vec![1.0, 1.0, 1.0, 1.0],
            horizon: DEFAULT_HORIZON,
        }),
        output_dir: None,
    }
}

fn nl_base(
    name: &str,
    cost: CostKind,
    algorithm: AlgorithmTag,
    initial_policy: InitialPolicy,
    initial_q: Option<InitialQ>,
) -> ExperimentConfig {
    let x0 = match cost {
        CostKind::Quadratic => vec![1.8, 1.0],
        CostKind::Nonquadratic => vec![0.7, -0.25],
    };
    ExperimentConfig {
        name: name.to_string(),
        plant: PlantSpec::Nonlinear2d,
        cost: CostSpec::identity(cost),
        basis: BasisKind::Quartic,
        buffer: BufferSpec {
            size: 3000,
            state_sampler: SamplerSpec::uniform(-5.0, 5.0, 2),
            action_sampler: SamplerSpec::gaussian(0.0, 1.0, 1),
            seed: DEFAULT_SEED,
        },
        run: RunConfig {
            algorithm,
            gamma: 0.95,
            epsilon: 1e-17,
            max_iters: DEFAULT_MAX_ITERS,
            stop_rule: StopRule::BufferQ,
            initial_policy,
            initial_q,
            moments: MomentSpec::standard(3).with_higher(vec![1.0; 12], vec![1.0; 4]),
            tau: None,
            roundoff_ulps: DEFAULT_ROUNDOFF_ULPS,
        },
        rollout: Some(RolloutSpec {
            x0,
            horizon: DEFAULT_HORIZON,
        }),
        output_dir: None,
    }
}

/// The benchmark configurations, seeded with [`DEFAULT_SEED`].
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    use AlgorithmTag::{Pi, Vi};
    let lti_gain = || InitialPolicy::gain(&LTI_PI_GAIN);
    let nl_gain = || InitialPolicy::gain(&NL_PI_GAIN);
    let zero_gain = || InitialPolicy::gain(&[0.0; 4]);
    Ok(match name {
        "lti4d-pi" => lti_base(name, Pi, lti_gain(), None),
        "lti4d-vi-a" => lti_base(name, Vi, InitialPolicy::Greedy, Some(InitialQ::Identity)),
        "lti4d-vi-b" => lti_base(name, Vi, lti_gain(), Some(InitialQ::Identity)),
        "nl2d-quad-pi" => nl_base(name, CostKind::Quadratic, Pi, nl_gain(), None),
        "nl2d-quad-vi-a" => nl_base(name, CostKind::Quadratic, Vi, zero_gain(), Some(InitialQ::Zero)),
        "nl2d-quad-vi-b" => nl_base(name, CostKind::Quadratic, Vi, nl_gain(), Some(InitialQ::Zero)),
        "nl2d-nonquad-pi" => nl_base(name, CostKind::Nonquadratic, Pi, nl_gain(), None),
        "nl2d-nonquad-vi-a" => nl_base(name, CostKind::Nonquadratic, Vi, zero_gain(), Some(InitialQ::Zero)),
        "nl2d-nonquad-vi-b" => nl_base(name, CostKind::Nonquadratic, Vi, nl_gain(), Some(InitialQ::Zero)),
        other => {
            return Err(Error::Unknown {
                kind: "preset",
                name: other.to_string(),
            })
        }
    })
}

/// Learned blocks and the greedy policy they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedQ {
    pub alpha: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub lin: Vec<f64>,
    pub s: f64,
    /// Greedy gain on the family's state features, row by row; absent when
    /// `P_uu` is not positive definite.
    pub gain: Option<Vec<Vec<f64>>>,
    pub offset: Option<Vec<f64>>,
}

impl LearnedQ {
    pub fn from_params(params: &QParams) -> Self {
        let blocks = params.blocks();
        let policy = params.greedy().ok();
        Self {
            alpha: params.alpha().iter().copied().collect(),
            p: rows_of(&blocks.p),
            lin: blocks.lin.iter().copied().collect(),
            s: blocks.s,
            gain: policy.as_ref().map(|p| rows_of(p.gain())),
            offset: policy.map(|p| p.offset().iter().copied().collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub error: QErrorRecord,
    pub pq: Vec<Vec<f64>>,
    /// Optimal policy is `u = -K x`.
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QErrorRecord {
    pub p: f64,
    pub lin: f64,
    pub s: f64,
}

impl From<QError> for QErrorRecord {
    fn from(e: QError) -> Self {
        Self { p: e.p, lin: e.lin, s: e.s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RolloutReport {
    Ok {
        x0: Vec<f64>,
        horizon: usize,
        cost: f64,
        final_state_norm: f64,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
    },
    Failed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub algorithm: AlgorithmTag,
    pub seed: u64,
    pub outcome: RunOutcome,
    pub converged: bool,
    /// LPs solved.
    pub iterations: usize,
    pub final_q_diff: Option<f64>,
    pub final_block_diff: Option<BlockDiff>,
    pub min_puu_eigenvalue: Option<f64>,
    pub learned: Option<LearnedQ>,
    /// `max_b |Q - l - gamma Q(y, greedy(y))|` at the last iterate.
    pub bellman_residual: Option<f64>,
    pub oracle: Option<OracleReport>,
    pub rollout: Option<RolloutReport>,
    pub wall_time_s: f64,
}

pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub buffer: ReplayBuffer,
    pub trace: IterationTrace,
    pub summary: Summary,
}

/// Riccati oracle for LTI plants with a quadratic cost.
pub fn lti_oracle(config: &ExperimentConfig) -> Result<Option<DareSolution>> {
    let Some(plant) = config.plant.lti()? else {
        return Ok(None);
    };
    if config.cost.kind != CostKind::Quadratic {
        return Ok(None);
    }
    let cost = config.cost.build(plant.a().nrows(), plant.b().ncols())?;
    solve_discounted_dare(plant.a(), plant.b(), cost.e(), cost.f(), config.run.gamma, 1e-14, 1_000_000).map(Some)
}

/// Builds the buffer, runs the configured algorithm and evaluates the result.
/// LP failures end up in the trace outcome rather than as an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let started = Instant::now();
    let prepared = config.prepare()?;
    let buffer = build_buffer(
        prepared.plant.as_ref(),
        &prepared.cost,
        &config.buffer.state_sampler,
        &config.buffer.action_sampler,
        config.buffer.size,
        config.buffer.seed,
    )?;
    let trace = run(&buffer, &prepared.family, &config.run)?;
    let summary = summarize(config, &prepared, &buffer, &trace, started)?;
    Ok(ExperimentResult {
        config: config.clone(),
        buffer,
        trace,
        summary,
    })
}

fn summarize(
    config: &ExperimentConfig,
    prepared: &Prepared,
    buffer: &ReplayBuffer,
    trace: &IterationTrace,
    started: Instant,
) -> Result<Summary> {
    let last = trace.last();
    let params = trace.final_params();
    let oracle = match (&params, config.basis) {
        (Some(q), BasisKind::ExtendedQuadratic) => lti_oracle(config)?
            .map(|dare| {
                Ok::<_, Error>(OracleReport {
                    error: qfun_error(q, &dare)?.into(),
                    pq: rows_of(&dare.pq),
                    k: rows_of(&dare.k),
                })
            })
            .transpose()?,
        _ => None,
    };
    let rollout = match (&params, &config.rollout) {
        (Some(q), Some(spec)) => Some(match q.greedy() {
            Ok(policy) => {
                let x0 = DVector::from_column_slice(&spec.x0);
                match rollout_cost(prepared.plant.as_ref(), &prepared.cost, &policy, &x0, config.run.gamma, spec.horizon) {
                    Ok(Rollout { cost, states, inputs }) => RolloutReport::Ok {
                        x0: spec.x0.clone(),
                        horizon: spec.horizon,
                        cost,
                        final_state_norm: states.last().map_or(0.0, |s| s.iter().fold(0.0, |a, v| a.max(v.abs()))),
                        states,
                        inputs,
                    },
                    Err(e) => RolloutReport::Failed { message: e.to_string() },
                }
            }
            Err(e) => RolloutReport::Failed { message: e.to_string() },
        }),
        _ => None,
    };
    Ok(Summary {
        name: config.name.clone(),
        algorithm: config.run.algorithm,
        seed: config.seed(),
        outcome: trace.outcome.clone(),
        converged: trace.converged(),
        iterations: trace.iterations(),
        final_q_diff: last.and_then(|r| r.q_diff),
        final_block_diff: last.and_then(|r| r.block_diff),
        min_puu_eigenvalue: trace.records.iter().map(|r| r.puu_min_eig).reduce(f64::min),
        learned: params.as_ref().map(LearnedQ::from_params),
        bellman_residual: params
            .as_ref()
            .and_then(|q| bellman_residual(buffer, q, config.run.gamma).ok()),
        oracle,
        rollout,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Writes the run directory; returns its path.
pub fn write_artifacts(result: &ExperimentResult, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&result.config)?)?;
    result.buffer.save(&dir.join("buffer.csv"))?;
    result.trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)?)?;
    if let Some(RolloutReport::Ok { states, inputs, .. }) = &result.summary.rollout {
        write_rollout_csv(&dir.join("rollout.csv"), states, inputs)?;
    }
    fs::write(dir.join("plot.py"), PLOT_SCRIPT)?;
    Ok(dir.to_path_buf())
}

/// `step, x0.., u0..`; the last row has no input.
pub fn write_rollout_csv(path: &Path, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = states.first().map_or(0, Vec::len);
    let m = inputs.first().map_or(0, Vec::len);
    let mut header = vec!["step".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for (k, x) in states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|v| format!("{v:.16e}")));
        match inputs.get(k) {
            Some(u) => row.extend(u.iter().map(|v| format!("{v:.16e}"))),
            None => row.extend((0..m).map(|_| String::new())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the learned Q-function of a finished run directory.
pub fn load_learned(dir: &Path) -> Result<(ExperimentConfig, QParams)> {
    let config = ExperimentConfig::load(&dir.join("config.json"))?;
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let learned = summary
        .learned
        .ok_or_else(|| Error::Config(format!("run in {} produced no Q-function", dir.display())))?;
    let prepared = config.prepare()?;
    let params = QParams::new(prepared.family, DVector::from_vec(learned.alpha))?;
    Ok((config, params))
}

const PLOT_SCRIPT: &str = r#"# Renders the difference norms of trace.csv and the trajectories of
# rollout.csv. Usage: python plot.py [run_dir]
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

run_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))


def read(name):
    path = os.path.join(run_dir, name)
    if not os.path.exists(path):
        return None
    with open(path) as f:
        return list(csv.DictReader(f))


def col(rows, key):
    out = []
    for r in rows:
        v = r.get(key, "")
        out.append(float(v) if v not in ("", None) else float("nan"))
    return out


trace = read("trace.csv")
rollout = read("rollout.csv")
panels = 1 + (rollout is not None)
fig, axes = plt.subplots(panels, 1, figsize=(7, 3.5 * panels), squeeze=False)

ax = axes[0][0]
it = col(trace, "iteration")
for key, label in [("p_diff", "|P^i - P^(i-1)|"), ("lin_diff", "|p^i - p^(i-1)|"), ("s_diff", "|s^i - s^(i-1)|"), ("q_diff", "max_b |Q^i - Q^(i-1)|")]:
    ys = col(trace, key)
    if any(y == y and y > 0 for y in ys):
        ax.semilogy(it, [y if y > 0 else float("nan") for y in ys], marker=".", label=label)
ax.set_xlabel("iteration")
ax.legend()
ax.grid(True, which="both", alpha=0.3)

if rollout is not None:
    ax = axes[1][0]
    steps = col(rollout, "step")
    for key in rollout[0].keys():
        if key != "step":
            ax.plot(steps, col(rollout, key), marker=".", label=key)
    ax.set_xlabel("k")
    ax.legend()
    ax.grid(True, alpha=0.3)

fig.tight_layout()
out = os.path.join(run_dir, "figure.png")
fig.savefig(out, dpi=150)
print(out)
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name, name);
            cfg.prepare().unwrap();
        }
        assert!(preset("lti4d").is_err());
    }

    #[test]
    fn preset_values() {
        let pi = preset("lti4d-pi").unwrap();
        assert_eq!(pi.run.gamma, 0.9);
        assert_eq!(pi.buffer.size, 7000);
        assert_eq!(pi.run.initial_policy, InitialPolicy::gain(&[-0.9, -0.7, -0.5, -0.1]));
        let vi = preset("nl2d-quad-vi-a").unwrap();
        assert_eq!(vi.run.gamma, 0.95);
        assert_eq!(vi.buffer.size, 3000);
        assert_eq!(vi.run.initial_q, Some(InitialQ::Zero));
        assert_eq!(vi.run.initial_policy, InitialPolicy::gain(&[0.0; 4]));
        let a = preset("lti4d-vi-a").unwrap();
        assert_eq!(a.run.initial_q, Some(InitialQ::Identity));
        assert_eq!(a.run.initial_policy, InitialPolicy::Greedy);
    }

    #[test]
    fn quartic_on_four_states_is_rejected() {
        let mut cfg = preset("lti4d-pi").unwrap();
        cfg.basis = BasisKind::Quartic;
        assert!(matches!(cfg.prepare(), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        }
    }
}

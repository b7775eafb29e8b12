//! Policy-iteration and value-iteration engines over a fixed replay buffer.
//!
//! Each iteration solves one LP. Both engines record every iterate so that
//! runs can be inspected, plotted and compared after the fact.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{objective_vector, BasisFamily, FeedbackPolicy, MomentSpec, QBlocks, QParams};
use crate::error::{check_dim, Error, Result};
use crate::lp::{
    assemble_pi_lp, assemble_vi_lp, buffer_q_values, solve_lp, AlgorithmTag, KktResiduals, LpStatus,
    SolverSettings,
};
use crate::replay::ReplayBuffer;

pub const DEFAULT_MAX_ITERS: usize = 500;

/// Which successive-iterate gap ends a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `max_b |Q^i(x_b, a_b) - Q^{i-1}(x_b, a_b)| <= epsilon`.
    #[default]
    BufferQ,
    /// `max(|dP|, |dp|, |ds|) <= epsilon`, entrywise.
    ParameterNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialPolicy {
    /// `u = K phi(x)` with `K` given row-major, `input_dim x state_feature_dim`.
    Gain { gain: Vec<f64> },
    /// Greedy policy of the initial Q-function.
    Greedy,
}

impl InitialPolicy {
    pub fn gain(gain: &[f64]) -> Self {
        Self::Gain { gain: gain.to_vec() }
    }

    pub fn build(&self, family: &BasisFamily, initial_q: Option<&QParams>) -> Result<FeedbackPolicy> {
        match self {
            Self::Gain { gain } => {
                let (m, d) = (family.input_dim(), family.state_feature_dim());
                check_dim("initial gain", m * d, gain.len())?;
                FeedbackPolicy::linear(family, DMatrix::from_row_slice(m, d, gain))
            }
            Self::Greedy => initial_q
                .ok_or_else(|| Error::Config("greedy initial policy needs an initial Q-function".into()))?
                .greedy(),
        }
    }
}

/// Initial Q-function for value iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialQ {
    Zero,
    /// `P = I`, no linear or constant part.
    Identity,
    Alpha { alpha: Vec<f64> },
}

impl InitialQ {
    pub fn build(&self, family: &BasisFamily) -> Result<QParams> {
        match self {
            Self::Zero => Ok(QParams::zeros(family.clone())),
            Self::Identity => {
                let d = family.lifted_dim();
                let blocks = QBlocks {
                    p: DMatrix::identity(d, d),
                    lin: DVector::zeros(d),
                    s: 0.0,
                    input_dim: family.input_dim(),
                };
                QParams::from_blocks(family.clone(), &blocks)
            }
            Self::Alpha { alpha } => QParams::new(family.clone(), DVector::from_column_slice(alpha)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: AlgorithmTag,
    pub gamma: f64,
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub stop_rule: StopRule,
    pub initial_policy: InitialPolicy,
    /// Required by value iteration; ignored by policy iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_q: Option<InitialQ>,
    pub moments: MomentSpec,
    /// Optional diagonal-dominance rows `P_ii - sum_{j != i} |P_ij| >= tau`
    /// on `P_uu`, appended to every LP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Round-off allowance in units of machine epsilon, relative to the
    /// magnitude of the compared quantity. The stopping threshold is
    /// `max(epsilon, roundoff_ulps * f64::EPSILON * scale)`; 0 gives the
    /// literal test.
    #[serde(default = "default_roundoff_ulps")]
    pub roundoff_ulps: f64,
}

pub const DEFAULT_ROUNDOFF_ULPS: f64 = 256.0;

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_roundoff_ulps() -> f64 {
    DEFAULT_ROUNDOFF_ULPS
}

impl RunConfig {
    pub fn validate(&self, family: &BasisFamily) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1)", self.gamma)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.roundoff_ulps >= 0.0 && self.roundoff_ulps.is_finite()) {
            return Err(Error::Config(format!("roundoff_ulps {} must be nonnegative", self.roundoff_ulps)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if let Some(tau) = self.tau {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::Config(format!("tau {tau} must be nonnegative")));
            }
        }
        if self.algorithm == AlgorithmTag::Vi && self.initial_q.is_none() {
            return Err(Error::Config("value iteration needs an initial Q-function".into()));
        }
        if self.algorithm == AlgorithmTag::Pi && self.initial_policy == InitialPolicy::Greedy && self.initial_q.is_none() {
            return Err(Error::Config("greedy initial policy needs an initial Q-function".into()));
        }
        self.moments.validate(family)
    }
}

/// `max_b |q_now[b] - q_prev[b]| <= epsilon`.
pub fn stopping_check(q_now: &DVector<f64>, q_prev: &DVector<f64>, epsilon: f64) -> bool {
    assert_eq!(q_now.len(), q_prev.len(), "buffer Q-value vectors differ in length");
    sup_diff(q_now, q_prev) <= epsilon
}

fn sup_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Entrywise sup-norm gaps between the blocks of two Q-functions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockDiff {
    pub p: f64,
    pub lin: f64,
    pub s: f64,
}

impl BlockDiff {
    pub fn between(a: &QBlocks, b: &QBlocks) -> Self {
        Self {
            p: (&a.p - &b.p).amax(),
            lin: (&a.lin - &b.lin).amax(),
            s: (a.s - b.s).abs(),
        }
    }

    pub fn max(&self) -> f64 {
        self.p.max(self.lin).max(self.s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Index of the LP solve, starting at 1.
    pub iteration: usize,
    pub alpha: Vec<f64>,
    #[serde(skip)]
    pub q_values: DVector<f64>,
    /// Gap to the previous buffer Q-values; absent when there is none.
    pub q_diff: Option<f64>,
    pub block_diff: Option<BlockDiff>,
    /// Threshold the gap was compared against.
    pub threshold: f64,
    /// Smallest eigenvalue of the learned `P_uu`.
    pub puu_min_eig: f64,
    pub lp_status: LpStatus,
    pub lp_iterations: usize,
    pub kkt: KktResiduals,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunOutcome {
    Converged,
    MaxIterations,
    Failed { stage: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub algorithm: AlgorithmTag,
    pub family: String,
    pub stop_rule: StopRule,
    pub epsilon: f64,
    /// Gain and offset of the policy used by the first LP.
    pub initial_gain: Vec<f64>,
    pub initial_offset: Vec<f64>,
    /// Coefficients of the initial Q-function (value iteration only).
    pub initial_alpha: Option<Vec<f64>>,
    pub records: Vec<IterationRecord>,
    pub outcome: RunOutcome,
    #[serde(skip)]
    family_spec: Option<BasisFamily>,
}

impl IterationTrace {
    /// Number of LPs solved.
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn converged(&self) -> bool {
        self.outcome == RunOutcome::Converged
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn family(&self) -> Option<&BasisFamily> {
        self.family_spec.as_ref()
    }

    /// Q-function of the last successful iterate.
    pub fn final_params(&self) -> Option<QParams> {
        let family = self.family_spec.clone()?;
        let last = self.records.last()?;
        QParams::new(family, DVector::from_column_slice(&last.alpha)).ok()
    }

    pub fn params_at(&self, index: usize) -> Option<QParams> {
        let family = self.family_spec.clone()?;
        let rec = self.records.get(index)?;
        QParams::new(family, DVector::from_column_slice(&rec.alpha)).ok()
    }

    /// One row per iteration: scalar diagnostics followed by `alpha`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let k = self.records.first().map_or(0, |r| r.alpha.len());
        let mut header: Vec<String> = [
            "iteration",
            "q_diff",
            "p_diff",
            "lin_diff",
            "s_diff",
            "threshold",
            "puu_min_eig",
            "lp_status",
            "lp_iterations",
            "kkt_max",
            "wall_time_s",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..k).map(|i| format!("alpha{i}")));
        out.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.16e}"));
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                opt(r.q_diff),
                opt(r.block_diff.map(|d| d.p)),
                opt(r.block_diff.map(|d| d.lin)),
                opt(r.block_diff.map(|d| d.s)),
                format!("{:.6e}", r.threshold),
                format!("{:.16e}", r.puu_min_eig),
                serde_json::to_value(r.lp_status)?.as_str().unwrap_or_default().to_string(),
                r.lp_iterations.to_string(),
                format!("{:.6e}", r.kkt.max()),
                format!("{:.6e}", r.wall_time_s),
            ];
            row.extend(r.alpha.iter().map(|a| format!("{a:.16e}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        m[(0, 0)]
    } else {
        m.clone().symmetric_eigenvalues().min()
    }
}

struct Engine<'a> {
    buffer: &'a ReplayBuffer,
    family: &'a BasisFamily,
    config: &'a RunConfig,
    objective: DVector<f64>,
    settings: SolverSettings,
    trace: IterationTrace,
}

enum Step {
    Continue(QParams, FeedbackPolicy),
    Stop,
}

impl<'a> Engine<'a> {
    fn new(
        buffer: &'a ReplayBuffer,
        family: &'a BasisFamily,
        config: &'a RunConfig,
        policy: &FeedbackPolicy,
        initial_q: Option<&QParams>,
    ) -> Result<Self> {
        let objective = objective_vector(family, &config.moments)?;
        Ok(Self {
            buffer,
            family,
            config,
            objective,
            settings: SolverSettings::default(),
            trace: IterationTrace {
                algorithm: config.algorithm,
                family: family.kind().name().to_string(),
                stop_rule: config.stop_rule,
                epsilon: config.epsilon,
                initial_gain: policy.gain().transpose().iter().copied().collect(),
                initial_offset: policy.offset().iter().copied().collect(),
                initial_alpha: initial_q.map(|q| q.alpha().iter().copied().collect()),
                records: Vec::new(),
                outcome: RunOutcome::MaxIterations,
                family_spec: Some(family.clone()),
            },
        })
    }

    fn fail(&mut self, stage: &str, err: Error) {
        log::warn!("{} run stopped at {stage}: {err}", self.config.algorithm.as_str());
        self.trace.outcome = RunOutcome::Failed {
            stage: stage.to_string(),
            message: err.to_string(),
        };
    }

    /// Solves one LP, records it, and decides whether to continue.
    fn step(
        &mut self,
        policy: &FeedbackPolicy,
        prev: Option<&QParams>,
        prev_q_values: Option<&DVector<f64>>,
    ) -> Step {
        let started = Instant::now();
        let iteration = self.trace.records.len() + 1;
        let assembled = match self.config.algorithm {
            AlgorithmTag::Pi => assemble_pi_lp(self.buffer, self.family, policy, self.config.gamma, &self.objective),
            AlgorithmTag::Vi => assemble_vi_lp(
                self.buffer,
                self.family,
                prev.expect("value iteration always has a previous iterate"),
                policy,
                self.config.gamma,
                &self.objective,
            ),
        };
        let mut lp = match assembled {
            Ok(lp) => lp,
            Err(e) => {
                self.fail("lp assembly", e);
                return Step::Stop;
            }
        };
        lp.meta.iteration = iteration;
        if let Some(tau) = self.config.tau {
            lp.add_diagonal_dominance_rows(self.family, tau);
        }
        let solution = solve_lp(&lp, &self.settings);
        if let Err(e) = solution.clone().into_result() {
            self.fail("lp solve", e);
            return Step::Stop;
        }
        self.settings.warm_start = Some(solution.basis.clone());
        let params = QParams::new(self.family.clone(), solution.alpha_star.clone()).expect("solver keeps the dimension");
        let q_values = match buffer_q_values(self.buffer, &params) {
            Ok(q) => q,
            Err(e) => {
                self.fail("buffer evaluation", e);
                return Step::Stop;
            }
        };
        let blocks = params.blocks();
        let q_diff = prev_q_values.map(|p| sup_diff(&q_values, p));
        let block_diff = prev.map(|p| BlockDiff::between(&blocks, &p.blocks()));
        let puu_min_eig = min_eigenvalue(&blocks.puu());
        let (gap, scale) = match self.config.stop_rule {
            StopRule::BufferQ => (q_diff, q_values.amax()),
            StopRule::ParameterNorm => (block_diff.map(|d| d.max()), params.alpha().amax()),
        };
        let threshold = self
            .config
            .epsilon
            .max(self.config.roundoff_ulps * f64::EPSILON * scale);
        log::debug!(
            "{} iteration {iteration}: q_diff {:?} block_diff {:?} lp iterations {}",
            self.config.algorithm.as_str(),
            q_diff,
            block_diff.map(|d| d.max()),
            solution.iterations
        );
        self.trace.records.push(IterationRecord {
            iteration,
            alpha: params.alpha().iter().copied().collect(),
            q_values: q_values.clone(),
            q_diff,
            block_diff,
            threshold,
            puu_min_eig,
            lp_status: solution.status,
            lp_iterations: solution.iterations,
            kkt: solution.kkt_residuals,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        if gap.is_some_and(|g| g <= threshold) {
            self.trace.outcome = RunOutcome::Converged;
            return Step::Stop;
        }
        if iteration >= self.config.max_iters {
            self.trace.outcome = RunOutcome::MaxIterations;
            return Step::Stop;
        }
        match params.greedy() {
            Ok(next) => Step::Continue(params, next),
            Err(e) => {
                self.fail("policy update", e);
                Step::Stop
            }
        }
    }
}

/// Policy iteration: evaluate the current policy by LP, improve greedily,
/// stop once successive iterates agree to `epsilon`.
pub fn run_q_pi_lp(buffer: &ReplayBuffer, family: &BasisFamily, config: &RunConfig) -> Result<IterationTrace> {
    if config.algorithm != AlgorithmTag::Pi {
        return Err(Error::Config("run_q_pi_lp needs algorithm = pi".into()));
    }
    config.validate(family)?;
    let initial_q = config.initial_q.as_ref().map(|q| q.build(family)).transpose()?;
    let mut policy = config.initial_policy.build(family, initial_q.as_ref())?;
    let mut engine = Engine::new(buffer, family, config, &policy, None)?;
    let mut prev: Option<(QParams, DVector<f64>)> = None;
    loop {
        let step = engine.step(&policy, prev.as_ref().map(|p| &p.0), prev.as_ref().map(|p| &p.1));
        match step {
            Step::Continue(params, next) => {
                let q = engine.trace.records.last().expect("just recorded").q_values.clone();
                prev = Some((params, q));
                policy = next;
            }
            Step::Stop => return Ok(engine.trace),
        }
    }
}

/// Value iteration: fit the one-step Bellman backup of the previous iterate
/// by LP, stop once successive iterates agree to `epsilon`.
pub fn run_q_vi_lp(buffer: &ReplayBuffer, family: &BasisFamily, config: &RunConfig) -> Result<IterationTrace> {
    if config.algorithm != AlgorithmTag::Vi {
        return Err(Error::Config("run_q_vi_lp needs algorithm = vi".into()));
    }
    config.validate(family)?;
    let initial = config
        .initial_q
        .as_ref()
        .expect("validated")
        .build(family)?;
    let mut policy = config.initial_policy.build(family, Some(&initial))?;
    let mut engine = Engine::new(buffer, family, config, &policy, Some(&initial))?;
    let mut prev_q = buffer_q_values(buffer, &initial)?;
    let mut prev = initial;
    loop {
        match engine.step(&policy, Some(&prev), Some(&prev_q)) {
            Step::Continue(params, next) => {
                prev_q = engine.trace.records.last().expect("just recorded").q_values.clone();
                prev = params;
                policy = next;
            }
            Step::Stop => return Ok(engine.trace),
        }
    }
}

/// `max_b |Q(x_b, a_b) - l_b - gamma Q(y_b, mu(y_b))|` with `mu` the greedy
/// policy of `params`.
pub fn bellman_residual(buffer: &ReplayBuffer, params: &QParams, gamma: f64) -> Result<f64> {
    let policy = params.greedy()?;
    let mut worst: f64 = 0.0;
    for t in buffer.iter() {
        let u = policy.control(t.y.as_slice())?;
        let r = params.eval(t.x.as_slice(), t.a.as_slice())? - t.l - gamma * params.eval(t.y.as_slice(), u.as_slice())?;
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Dispatches on `config.algorithm`.
pub fn run(buffer: &ReplayBuffer, family: &BasisFamily, config: &RunConfig) -> Result<IterationTrace> {
    match config.algorithm {
        AlgorithmTag::Pi => run_q_pi_lp(buffer, family, config),
        AlgorithmTag::Vi => run_q_vi_lp(buffer, family, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_check_boundaries() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(stopping_check(&a, &a, 1e-300));
        let mut b = a.clone();
        b[1] += 0.5;
        assert!(!stopping_check(&a, &b, 0.25));
        assert!(stopping_check(&a, &b, 0.5));
    }

    #[test]
    fn initial_q_identity_has_unit_diagonal() {
        let family = BasisFamily::new(crate::basis::BasisKind::ExtendedQuadratic, 2, 1).unwrap();
        let q = InitialQ::Identity.build(&family).unwrap();
        let blocks = q.blocks();
        assert_eq!(blocks.p, DMatrix::identity(3, 3));
        assert_eq!(blocks.s, 0.0);
        let policy = InitialPolicy::Greedy.build(&family, Some(&q)).unwrap();
        assert_eq!(policy.gain().amax(), 0.0);
    }

    #[test]
    fn gain_length_is_checked() {
        let family = BasisFamily::new(crate::basis::BasisKind::Quartic, 2, 1).unwrap();
        assert!(InitialPolicy::gain(&[1.0, 2.0]).build(&family, None).is_err());
        let p = InitialPolicy::gain(&[-1.5, 0.5, 0.0, 0.0]).build(&family, None).unwrap();
        assert_eq!(p.control(&[1.0, 2.0]).unwrap()[0], -0.5);
    }
}

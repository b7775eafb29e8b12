//! Data-driven LPs of the policy- and value-iteration steps and the solver
//! contract behind them.
//!
//! Every problem has the shape `maximize m'a subject to G a <= h`. Row `b` of
//! `G` belongs to buffer tuple `b`; optional regularization rows come after
//! the data rows.

mod simplex;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, FeedbackPolicy, QParams};
use crate::error::{check_dim, Error, Result};
use crate::replay::ReplayBuffer;

pub use simplex::solve_lp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmTag {
    Pi,
    Vi,
}

impl AlgorithmTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pi => "pi",
            Self::Vi => "vi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LpMeta {
    pub iteration: usize,
    pub algorithm: Option<AlgorithmTag>,
    /// Number of leading rows that come from buffer tuples.
    pub data_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub meta: LpMeta,
}

impl LpProblem {
    pub fn new(objective: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        check_dim("LP objective", g.ncols(), objective.len())?;
        check_dim("LP right-hand side", g.nrows(), h.len())?;
        if objective.iter().chain(g.iter()).chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LP data"));
        }
        let data_rows = g.nrows();
        Ok(Self {
            objective,
            g,
            h,
            meta: LpMeta {
                data_rows,
                ..LpMeta::default()
            },
        })
    }

    pub fn rows(&self) -> usize {
        self.g.nrows()
    }

    pub fn cols(&self) -> usize {
        self.g.ncols()
    }

    /// `h - G a`, one entry per row.
    pub fn slacks(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.h - &self.g * alpha
    }

    /// Appends rows keeping every diagonal entry of `P_uu` at least `tau`
    /// above the sum of the magnitudes of its row's off-diagonal entries.
    pub fn add_diagonal_dominance_rows(&mut self, family: &BasisFamily, tau: f64) {
        let m = family.input_dim();
        let off = family.state_feature_dim();
        let k = self.cols();
        let mut extra: Vec<(DVector<f64>, f64)> = Vec::new();
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            for signs in 0..(1usize << others.len()) {
                let mut row = DVector::zeros(k);
                row[family.product_index(off + i, off + i)] = -1.0;
                for (bit, &j) in others.iter().enumerate() {
                    let s = if signs >> bit & 1 == 1 { -1.0 } else { 1.0 };
                    row[family.product_index(off + i, off + j)] = s;
                }
                extra.push((row, -tau));
            }
        }
        let n0 = self.rows();
        let mut g = self.g.clone().resize_vertically(n0 + extra.len(), 0.0);
        let mut h = self.h.clone().resize_vertically(n0 + extra.len(), 0.0);
        for (r, (row, rhs)) in extra.into_iter().enumerate() {
            g.set_row(n0 + r, &row.transpose());
            h[n0 + r] = rhs;
        }
        self.g = g;
        self.h = h;
    }

    /// Plain-text dump for replay in an external solver:
    ///
    /// ```text
    /// # qlp-lp algorithm=<pi|vi|-> iteration=<i> rows=<N> cols=<K> data_rows=<n>
    /// m <K values>
    /// <K values of row 1> <h_1>
    /// ...
    /// ```
    ///
    /// Values use 17 significant digits; the problem is `max m'a s.t. G a <= h`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# qlp-lp algorithm={} iteration={} rows={} cols={} data_rows={}",
            self.meta.algorithm.map_or("-", |a| a.as_str()),
            self.meta.iteration,
            self.rows(),
            self.cols(),
            self.meta.data_rows
        )?;
        write!(w, "m")?;
        for v in self.objective.iter() {
            write!(w, " {v:.16e}")?;
        }
        writeln!(w)?;
        for j in 0..self.rows() {
            let mut first = true;
            for v in self.g.row(j).iter() {
                if !first {
                    write!(w, " ")?;
                }
                first = false;
                write!(w, "{v:.16e}")?;
            }
            writeln!(w, " {:.16e}", self.h[j])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
    NumericalFailure,
}

/// KKT residuals measured after column scaling and row normalization, so all
/// three are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_infeasibility
            .max(self.dual_infeasibility)
            .max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub alpha_star: DVector<f64>,
    pub objective_value: f64,
    pub status: LpStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
    /// Rows active at the returned vertex; usable as a warm start.
    pub basis: Vec<usize>,
    /// Optimal dual multipliers, one per row.
    pub dual: Option<DVector<f64>>,
    /// For `Unbounded`: a ray `r` with `G r <= 0`, `m'r > 0`. For
    /// `Infeasible`: `y >= 0` with `G'y = 0`, `h'y < 0`.
    pub certificate: Option<DVector<f64>>,
}

impl LpSolution {
    /// Maps non-optimal outcomes onto errors.
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Unbounded => Err(Error::LpUnbounded),
            LpStatus::Infeasible => Err(Error::LpInfeasible),
            LpStatus::NumericalFailure => Err(Error::LpNumerical(format!(
                "KKT residual {:e} after {} iterations",
                self.kkt_residuals.max(),
                self.iterations
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Bound on the KKT residuals for an `Optimal` status.
    pub kkt_tol: f64,
    /// Pricing tolerance on (normalized) reduced costs.
    pub optimality_tol: f64,
    /// Phase-one objective above which the dual is declared infeasible.
    pub feasibility_tol: f64,
    pub max_iterations: usize,
    pub refinement_steps: usize,
    pub warm_start: Option<Vec<usize>>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-9,
            optimality_tol: 1e-12,
            feasibility_tol: 1e-9,
            max_iterations: 100_000,
            refinement_steps: 2,
            warm_start: None,
        }
    }
}

fn policy_at_next_states(
    buffer: &ReplayBuffer,
    family: &BasisFamily,
    policy: &FeedbackPolicy,
) -> Result<Vec<f64>> {
    check_dim("policy state", family.state_dim(), policy.state_dim())?;
    check_dim("policy input", family.input_dim(), policy.input_dim())?;
    let m = family.input_dim();
    let mut phi = vec![0.0; family.state_feature_dim()];
    let mut out = vec![0.0; buffer.len() * m];
    for (b, t) in buffer.iter().enumerate() {
        let u = &mut out[b * m..(b + 1) * m];
        policy.control_into(t.y.as_slice(), &mut phi, u);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "policy is not finite at buffer tuple {b}"
            )));
        }
    }
    Ok(out)
}

fn check_buffer(buffer: &ReplayBuffer, family: &BasisFamily, objective: &DVector<f64>) -> Result<()> {
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("replay buffer is empty".into()));
    }
    check_dim("buffer state", family.state_dim(), buffer.state_dim())?;
    check_dim("buffer input", family.input_dim(), buffer.input_dim())?;
    check_dim("objective", family.feature_count(), objective.len())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("discount {gamma} outside (0, 1)")))
    }
}

/// Policy-evaluation LP: row `b` is
/// `features(x_b, a_b) - gamma features(y_b, mu(y_b))` with bound `l_b`.
pub fn assemble_pi_lp(
    buffer: &ReplayBuffer,
    family: &BasisFamily,
    policy: &FeedbackPolicy,
    gamma: f64,
    objective: &DVector<f64>,
) -> Result<LpProblem> {
    check_gamma(gamma)?;
    check_buffer(buffer, family, objective)?;
    let (n, k, m) = (buffer.len(), family.feature_count(), family.input_dim());
    let controls = policy_at_next_states(buffer, family, policy)?;
    let mut g = DMatrix::zeros(n, k);
    let mut h = DVector::zeros(n);
    let mut z = vec![0.0; family.lifted_dim()];
    let mut now = vec![0.0; k];
    let mut next = vec![0.0; k];
    for (b, t) in buffer.iter().enumerate() {
        family.features_into(t.x.as_slice(), t.a.as_slice(), &mut z, &mut now);
        family.features_into(t.y.as_slice(), &controls[b * m..(b + 1) * m], &mut z, &mut next);
        for c in 0..k {
            g[(b, c)] = now[c] - gamma * next[c];
        }
        h[b] = t.l;
    }
    let mut lp = LpProblem::new(objective.clone(), g, h)?;
    lp.meta.algorithm = Some(AlgorithmTag::Pi);
    Ok(lp)
}

/// Like [`assemble_pi_lp`] with the greedy policy of `params`.
pub fn assemble_pi_lp_greedy(
    buffer: &ReplayBuffer,
    params: &QParams,
    gamma: f64,
    objective: &DVector<f64>,
) -> Result<LpProblem> {
    let policy = params.greedy().map_err(at_first_tuple)?;
    assemble_pi_lp(buffer, params.family(), &policy, gamma, objective)
}

/// The greedy policy is an affine map, so when it is undefined it is
/// undefined at the first tuple that needs it.
fn at_first_tuple(e: Error) -> Error {
    match e {
        Error::PolicyUndefined { eigenvalue, .. } => Error::PolicyUndefined {
            eigenvalue,
            tuple: Some(0),
        },
        other => other,
    }
}

/// Value-iteration LP: row `b` is `features(x_b, a_b)` with bound
/// `l_b + gamma Q_prev(y_b, mu(y_b))`.
pub fn assemble_vi_lp(
    buffer: &ReplayBuffer,
    family: &BasisFamily,
    prev_q: &QParams,
    policy: &FeedbackPolicy,
    gamma: f64,
    objective: &DVector<f64>,
) -> Result<LpProblem> {
    check_gamma(gamma)?;
    check_buffer(buffer, family, objective)?;
    if prev_q.family() != family {
        return Err(Error::InvalidArgument(
            "previous Q-function belongs to a different family".into(),
        ));
    }
    let (n, k, m) = (buffer.len(), family.feature_count(), family.input_dim());
    let controls = policy_at_next_states(buffer, family, policy)?;
    let mut g = DMatrix::zeros(n, k);
    let mut h = DVector::zeros(n);
    let mut z = vec![0.0; family.lifted_dim()];
    let mut now = vec![0.0; k];
    let mut next = vec![0.0; k];
    let alpha = prev_q.alpha();
    for (b, t) in buffer.iter().enumerate() {
        family.features_into(t.x.as_slice(), t.a.as_slice(), &mut z, &mut now);
        family.features_into(t.y.as_slice(), &controls[b * m..(b + 1) * m], &mut z, &mut next);
        let q_next: f64 = next.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
        for c in 0..k {
            g[(b, c)] = now[c];
        }
        h[b] = t.l + gamma * q_next;
    }
    let mut lp = LpProblem::new(objective.clone(), g, h)?;
    lp.meta.algorithm = Some(AlgorithmTag::Vi);
    Ok(lp)
}

/// Q-values `features(x_b, a_b) . alpha` over the buffer.
pub fn buffer_q_values(buffer: &ReplayBuffer, params: &QParams) -> Result<DVector<f64>> {
    let family = params.family();
    check_dim("buffer state", family.state_dim(), buffer.state_dim())?;
    check_dim("buffer input", family.input_dim(), buffer.input_dim())?;
    let mut z = vec![0.0; family.lifted_dim()];
    let mut phi = vec![0.0; family.feature_count()];
    let alpha = params.alpha();
    Ok(DVector::from_iterator(
        buffer.len(),
        buffer.iter().map(|t| {
            family.features_into(t.x.as_slice(), t.a.as_slice(), &mut z, &mut phi);
            phi.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum::<f64>()
        }),
    ))
}

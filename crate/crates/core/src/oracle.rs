//! Ground truth: the discounted Riccati solution of LTI problems and
//! discounted rollout costs of arbitrary policies.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::{BasisKind, FeedbackPolicy, QParams};
use crate::error::{check_dim, Error, Result};
use crate::systems::{Plant, StageCost};

/// Fixed point of the discounted Riccati recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    /// Value matrix, `V(x) = x'Px`.
    pub p: DMatrix<f64>,
    /// Optimal Q-matrix over `[x; u]`.
    pub pq: DMatrix<f64>,
    /// Optimal gain; the optimal policy is `u = -K x`.
    pub k: DMatrix<f64>,
    /// Sup-norm of the Riccati equation residual at `p`.
    pub residual: f64,
    /// Sup-norm gap between the discounted recursion and the equivalent
    /// undiscounted recursion on `(sqrt(gamma) A, sqrt(gamma) B)`.
    pub form_mismatch: f64,
    pub iterations: usize,
}

fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    gamma: f64,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = f + b.tr_mul(&pb) * gamma;
    let cross = b.tr_mul(&pa) * gamma;
    let gain = s.lu().solve(&cross)?;
    let next = e + a.tr_mul(&pa) * gamma - cross.tr_mul(&gain);
    Some((&next + next.transpose()) * 0.5)
}

fn recursion(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, usize)> {
    let mut p = e.clone();
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_step(a, b, e, f, gamma, &p)
            .ok_or_else(|| Error::InvalidArgument("singular input weight in Riccati recursion".into()))?;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        last_change = (&next - &p).amax();
        p = next;
        if last_change <= tol * p.amax().max(1.0) {
            return Ok((p, it));
        }
    }
    Err(Error::RiccatiNotConverged {
        iterations: max_iter,
        last_change,
    })
}

/// Iterates `P <- E + g A'PA - g^2 A'PB (F + g B'PB)^{-1} B'PA` from `P = E`
/// until successive iterates differ by at most `tol` (relative to `|P|` when
/// it exceeds one).
pub fn solve_discounted_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DareSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() {
        return Err(Error::InvalidArgument("A must be square".into()));
    }
    check_dim("DARE B rows", n, b.nrows())?;
    check_dim("DARE E", n, e.nrows())?;
    check_dim("DARE F", m, f.nrows())?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("discount {gamma} outside (0, 1]")));
    }
    if f.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument("input weight F must be positive definite".into()));
    }

    let (p, iterations) = recursion(a, b, e, f, gamma, tol, max_iter)?;
    let sg = gamma.sqrt();
    let (p_undiscounted, _) = recursion(&(a * sg), &(b * sg), e, f, 1.0, tol, max_iter)?;
    let form_mismatch = (&p - &p_undiscounted).amax();

    let residual = riccati_step(a, b, e, f, gamma, &p)
        .map(|next| (next - &p).amax())
        .unwrap_or(f64::INFINITY);

    let pxx = e + a.tr_mul(&(&p * a)) * gamma;
    let pxx = (&pxx + pxx.transpose()) * 0.5;
    let pxu = a.tr_mul(&(&p * b)) * gamma;
    let puu = f + b.tr_mul(&(&p * b)) * gamma;
    let puu = (&puu + puu.transpose()) * 0.5;
    let mut pq = DMatrix::zeros(n + m, n + m);
    pq.view_mut((0, 0), (n, n)).copy_from(&pxx);
    pq.view_mut((0, n), (n, m)).copy_from(&pxu);
    pq.view_mut((n, 0), (m, n)).copy_from(&pxu.transpose());
    pq.view_mut((n, n), (m, m)).copy_from(&puu);
    let k = puu
        .lu()
        .solve(&pxu.transpose())
        .ok_or_else(|| Error::InvalidArgument("singular P_uu".into()))?;

    Ok(DareSolution {
        p,
        pq,
        k,
        residual,
        form_mismatch,
        iterations,
    })
}

/// Anything that maps a state to an input.
pub trait ControlLaw {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl ControlLaw for FeedbackPolicy {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        FeedbackPolicy::control(self, x.as_slice())
    }
}

impl<F> ControlLaw for F
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollout {
    pub cost: f64,
    /// `horizon + 1` states starting at `x0`.
    pub states: Vec<Vec<f64>>,
    /// `horizon` inputs.
    pub inputs: Vec<Vec<f64>>,
}

pub const DEFAULT_BLOWUP: f64 = 1e9;

/// Truncated discounted cost `sum_{k < horizon} gamma^k l(x_k, mu(x_k))`.
pub fn rollout_cost(
    plant: &dyn Plant,
    cost: &dyn StageCost,
    policy: &dyn ControlLaw,
    x0: &DVector<f64>,
    gamma: f64,
    horizon: usize,
) -> Result<Rollout> {
    rollout_with_bound(plant, cost, policy, x0, gamma, horizon, DEFAULT_BLOWUP)
}

pub fn rollout_with_bound(
    plant: &dyn Plant,
    cost: &dyn StageCost,
    policy: &dyn ControlLaw,
    x0: &DVector<f64>,
    gamma: f64,
    horizon: usize,
    blowup: f64,
) -> Result<Rollout> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    check_dim("rollout x0", plant.state_dim(), x0.len())?;
    let mut x = x0.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    let mut states = vec![x.as_slice().to_vec()];
    let mut inputs = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let u = policy.control(&x)?;
        total += discount * cost.eval(&x, &u)?;
        discount *= gamma;
        x = plant.step(&x, &u)?;
        inputs.push(u.as_slice().to_vec());
        states.push(x.as_slice().to_vec());
        let norm = x.amax();
        if !(norm <= blowup) {
            return Err(Error::DivergedTrajectory { step: step + 1, norm });
        }
    }
    Ok(Rollout {
        cost: total,
        states,
        inputs,
    })
}

/// Sup-norm errors of a learned extended-quadratic Q-function against the
/// Riccati oracle (whose linear and constant parts are zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QError {
    pub p: f64,
    pub lin: f64,
    pub s: f64,
}

impl QError {
    pub fn max(&self) -> f64 {
        self.p.max(self.lin).max(self.s)
    }
}

pub fn qfun_error(params: &QParams, dare: &DareSolution) -> Result<QError> {
    let family = params.family();
    if family.kind() != BasisKind::ExtendedQuadratic {
        return Err(Error::InvalidArgument(format!(
            "oracle comparison needs the extended quadratic family, got {}",
            family.kind().name()
        )));
    }
    check_dim("oracle Q matrix", family.lifted_dim(), dare.pq.nrows())?;
    let blocks = params.blocks();
    Ok(QError {
        p: (&blocks.p - &dare.pq).amax(),
        lin: blocks.lin.amax(),
        s: blocks.s.abs(),
    })
}

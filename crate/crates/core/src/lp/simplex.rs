//! Dense revised simplex for `max m'a  s.t.  G a <= h` with free `a`.
//!
//! The solver works on the dual standard form `min h'y  s.t.  G'y = m, y >= 0`.
//! Its basis is a `K x K` matrix of constraint rows, so the cost of an
//! iteration is dominated by pricing the `N` rows, and the simplex
//! multipliers of the dual are exactly the primal point: every basis
//! corresponds to the vertex where `K` constraints are active.
//!
//! Columns of `G` are scaled by powers of two (exact) and rows are normalized
//! to unit length before pivoting; reduced costs are then signed distances
//! from the current vertex to each constraint hyperplane.

use nalgebra::{DMatrix, DVector};

use super::{KktResiduals, LpProblem, LpSolution, LpStatus, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Row(usize),
    /// Artificial unit column for equation `i`; fixed at zero outside phase one.
    Artificial(usize),
}

struct Scaled {
    k: usize,
    n: usize,
    /// Row-major normalized constraint rows.
    rows: Vec<f64>,
    rhs: Vec<f64>,
    obj: Vec<f64>,
    col_scale: Vec<f64>,
    row_scale: Vec<f64>,
    /// Rows that are identically zero (checked separately).
    empty: Vec<bool>,
}

impl Scaled {
    fn new(problem: &LpProblem) -> Self {
        let (n, k) = problem.g.shape();
        let col_scale: Vec<f64> = (0..k)
            .map(|c| {
                let amax = problem.g.column(c).amax();
                if amax > 0.0 && amax.is_finite() {
                    (-amax.log2().round()).exp2()
                } else {
                    1.0
                }
            })
            .collect();
        let mut rows = vec![0.0; n * k];
        let mut rhs = vec![0.0; n];
        let mut row_scale = vec![1.0; n];
        let mut empty = vec![false; n];
        for j in 0..n {
            let row = &mut rows[j * k..(j + 1) * k];
            for c in 0..k {
                row[c] = problem.g[(j, c)] * col_scale[c];
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                empty[j] = true;
                rhs[j] = problem.h[j];
                continue;
            }
            let s = 1.0 / norm;
            row.iter_mut().for_each(|v| *v *= s);
            rhs[j] = problem.h[j] * s;
            row_scale[j] = s;
        }
        let obj = (0..k).map(|c| problem.objective[c] * col_scale[c]).collect();
        Self {
            k,
            n,
            rows,
            rhs,
            obj,
            col_scale,
            row_scale,
            empty,
        }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.k..(j + 1) * self.k]
    }
}

struct Tableau<'a> {
    data: &'a Scaled,
    basis: Vec<Slot>,
    in_basis: Vec<bool>,
    /// Sign of each artificial column (so that phase one starts feasible).
    art_sign: Vec<f64>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    pi: DVector<f64>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded { entering: usize, direction: DVector<f64> },
    IterationLimit,
    Singular,
}

impl<'a> Tableau<'a> {
    fn column(&self, slot: Slot) -> DVector<f64> {
        match slot {
            Slot::Row(j) => DVector::from_row_slice(self.data.row(j)),
            Slot::Artificial(i) => {
                let mut e = DVector::zeros(self.data.k);
                e[i] = self.art_sign[i];
                e
            }
        }
    }

    fn refactor(&mut self, phase_one: bool) -> bool {
        let k = self.data.k;
        let mut b = DMatrix::zeros(k, k);
        for (r, slot) in self.basis.iter().enumerate() {
            b.set_column(r, &self.column(*slot));
        }
        let Some(binv) = b.lu().try_inverse() else {
            return false;
        };
        if binv.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.binv = binv;
        let rhs = DVector::from_row_slice(&self.data.obj);
        self.xb = &self.binv * rhs;
        let cb = DVector::from_iterator(
            k,
            self.basis.iter().map(|s| match (s, phase_one) {
                (Slot::Row(j), false) => self.data.rhs[*j],
                (Slot::Row(_), true) => 0.0,
                (Slot::Artificial(_), true) => 1.0,
                (Slot::Artificial(_), false) => 0.0,
            }),
        );
        self.pi = self.binv.tr_mul(&cb);
        true
    }

    /// Reduced cost of row `j` and the magnitude of the terms it is computed
    /// from, which sets the scale of its rounding error.
    fn reduced_cost(&self, j: usize, phase_one: bool) -> (f64, f64) {
        let mut dot = 0.0;
        let mut mag = 0.0;
        for (a, b) in self.data.row(j).iter().zip(self.pi.iter()) {
            dot += a * b;
            mag += (a * b).abs();
        }
        let c = if phase_one { 0.0 } else { self.data.rhs[j] };
        (c - dot, mag + c.abs())
    }

    fn objective(&self, phase_one: bool) -> f64 {
        self.basis
            .iter()
            .zip(self.xb.iter())
            .map(|(s, x)| match (s, phase_one) {
                (Slot::Artificial(_), true) => *x,
                (Slot::Row(j), false) => self.data.rhs[*j] * x,
                _ => 0.0,
            })
            .sum()
    }

    fn pricing(&self, phase_one: bool, tol: f64, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.data.n {
            if self.in_basis[j] || self.data.empty[j] {
                continue;
            }
            let (r, mag) = self.reduced_cost(j, phase_one);
            if r < -tol * mag.max(1.0) {
                if bland {
                    return Some(j);
                }
                if best.map_or(true, |(_, br)| r < br) {
                    best = Some((j, r));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Harris two-pass ratio test. Returns the leaving basis position.
    fn ratio_test(&self, d: &DVector<f64>, phase_one: bool, bland: bool) -> Option<usize> {
        let piv_tol = 1e-9 * d.amax().max(1e-300);
        // Bland's rule only prevents cycling with an exact minimum ratio.
        let harris = if bland { 0.0 } else { 1e-12 };
        // Artificials that must stay at zero leave as soon as they move.
        if !phase_one {
            let mut best: Option<(usize, f64)> = None;
            for (r, slot) in self.basis.iter().enumerate() {
                if matches!(slot, Slot::Artificial(_)) && d[r].abs() > piv_tol {
                    if best.map_or(true, |(_, v)| d[r].abs() > v) {
                        best = Some((r, d[r].abs()));
                    }
                }
            }
            if let Some((r, _)) = best {
                return Some(r);
            }
        }
        let xb = |r: usize| self.xb[r].max(0.0);
        let theta_min = (0..d.len())
            .filter(|&r| d[r] > piv_tol)
            .map(|r| xb(r) / d[r])
            .fold(f64::INFINITY, f64::min);
        if !theta_min.is_finite() {
            return None;
        }
        if bland {
            let key = |s: Slot| match s {
                Slot::Artificial(i) => (0, i),
                Slot::Row(j) => (1, j),
            };
            return (0..d.len())
                .filter(|&r| d[r] > piv_tol && xb(r) / d[r] <= theta_min)
                .min_by_key(|&r| key(self.basis[r]));
        }
        let scale = self.xb.amax().max(1.0);
        if theta_min * d.amax() <= 1e-12 * scale {
            // Degenerate step: the lexicographic rule keeps every basis
            // distinct, which rules out cycling.
            let ties: Vec<usize> = (0..d.len())
                .filter(|&r| d[r] > piv_tol && xb(r) / d[r] <= theta_min + 1e-12 * scale / d[r])
                .collect();
            return ties.into_iter().reduce(|b, r| if self.lex_less(r, b, d) { r } else { b });
        }
        // Harris two-pass: admit ties up to a small tolerance and take the
        // largest pivot among them.
        let mut theta_max = f64::INFINITY;
        for r in 0..d.len() {
            if d[r] > piv_tol {
                theta_max = theta_max.min((xb(r) + harris) / d[r]);
            }
        }
        let mut best: Option<usize> = None;
        for r in 0..d.len() {
            if d[r] > piv_tol && xb(r) / d[r] <= theta_max {
                best = match best {
                    None => Some(r),
                    Some(b) => {
                        // prefer dropping artificials, then the larger pivot
                        let art = |p: usize| matches!(self.basis[p], Slot::Artificial(_));
                        let better = (art(r) && !art(b)) || (art(r) == art(b) && d[r] > d[b]);
                        Some(if better { r } else { b })
                    }
                };
            }
        }
        best
    }

    /// Lexicographic comparison of rows `r` and `b` of `B^{-1} / d`.
    fn lex_less(&self, r: usize, b: usize, d: &DVector<f64>) -> bool {
        let tol = 1e-13 * self.binv.amax().max(1.0);
        for c in 0..self.binv.ncols() {
            let vr = self.binv[(r, c)] / d[r];
            let vb = self.binv[(b, c)] / d[b];
            if (vr - vb).abs() > tol * (1.0 / d[r]).max(1.0 / d[b]) {
                return vr < vb;
            }
        }
        d[r] > d[b]
    }

    fn pivot(&mut self, leave: usize, enter: usize) {
        if let Slot::Row(j) = self.basis[leave] {
            self.in_basis[j] = false;
        }
        self.basis[leave] = Slot::Row(enter);
        self.in_basis[enter] = true;
    }

    fn run(&mut self, phase_one: bool, settings: &SolverSettings) -> Outcome {
        let mut stall = 0usize;
        let mut last_obj = f64::INFINITY;
        loop {
            if !self.refactor(phase_one) {
                return Outcome::Singular;
            }
            if self.iterations >= settings.max_iterations {
                return Outcome::IterationLimit;
            }
            let obj = self.objective(phase_one);
            if obj < last_obj - 1e-14 * obj.abs().max(1.0) {
                stall = 0;
            } else {
                stall += 1;
            }
            last_obj = last_obj.min(obj);
            let bland = stall > 5000;
            let Some(enter) = self.pricing(phase_one, settings.optimality_tol, bland) else {
                return Outcome::Optimal;
            };
            let d = &self.binv * DVector::from_row_slice(self.data.row(enter));
            let Some(leave) = self.ratio_test(&d, phase_one, bland) else {
                return Outcome::Unbounded {
                    entering: enter,
                    direction: d,
                };
            };
            self.pivot(leave, enter);
            self.iterations += 1;
        }
    }

    /// Swaps zero-valued artificials out of the basis where possible.
    fn drive_out_artificials(&mut self) {
        for r in 0..self.basis.len() {
            if !matches!(self.basis[r], Slot::Artificial(_)) {
                continue;
            }
            if !self.refactor(false) {
                return;
            }
            let row = self.binv.row(r).clone_owned();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.data.n {
                if self.in_basis[j] || self.data.empty[j] {
                    continue;
                }
                let v: f64 = row
                    .iter()
                    .zip(self.data.row(j))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs();
                if v > 1e-7 && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                self.pivot(r, j);
            }
        }
    }
}

fn empty_solution(k: usize, status: LpStatus, iterations: usize) -> LpSolution {
    LpSolution {
        alpha_star: DVector::zeros(k),
        objective_value: f64::NAN,
        status,
        kkt_residuals: KktResiduals::default(),
        iterations,
        basis: Vec::new(),
        dual: None,
        certificate: None,
    }
}

/// Solves `max m'a s.t. G a <= h`.
pub fn solve_lp(problem: &LpProblem, settings: &SolverSettings) -> LpSolution {
    let (n, k) = problem.g.shape();
    if k == 0 {
        let infeasible = problem.h.iter().any(|v| *v < 0.0);
        let status = if infeasible {
            LpStatus::Infeasible
        } else {
            LpStatus::Optimal
        };
        let mut s = empty_solution(0, status, 0);
        s.objective_value = 0.0;
        return s;
    }
    let finite = problem.g.iter().all(|v| v.is_finite())
        && problem.h.iter().all(|v| v.is_finite())
        && problem.objective.iter().all(|v| v.is_finite());
    if !finite || problem.objective.len() != k || problem.h.len() != n {
        return empty_solution(k, LpStatus::NumericalFailure, 0);
    }
    let data = Scaled::new(problem);

    // A zero row with negative right-hand side is a trivial infeasibility.
    if let Some(j) = (0..n).find(|&j| data.empty[j] && data.rhs[j] < 0.0) {
        let mut s = empty_solution(k, LpStatus::Infeasible, 0);
        let mut y = DVector::zeros(n);
        y[j] = 1.0;
        s.certificate = Some(y);
        return s;
    }

    let mut tab = Tableau {
        data: &data,
        basis: Vec::new(),
        in_basis: vec![false; n],
        art_sign: data
            .obj
            .iter()
            .map(|v| if *v < 0.0 { -1.0 } else { 1.0 })
            .collect(),
        binv: DMatrix::zeros(k, k),
        xb: DVector::zeros(k),
        pi: DVector::zeros(k),
        iterations: 0,
    };

    let warm = settings.warm_start.as_ref().and_then(|rows| {
        let valid = rows.len() == k
            && rows.iter().all(|&j| j < n && !data.empty[j])
            && {
                let mut seen = rows.clone();
                seen.sort_unstable();
                seen.dedup();
                seen.len() == k
            };
        valid.then(|| rows.clone())
    });
    let mut warm_ok = false;
    if let Some(rows) = warm {
        tab.basis = rows.iter().map(|&j| Slot::Row(j)).collect();
        rows.iter().for_each(|&j| tab.in_basis[j] = true);
        let scale = tab_xb_scale(&data);
        if tab.refactor(false) && tab.xb.iter().all(|v| *v >= -1e-12 * scale) {
            warm_ok = true;
        } else {
            tab.in_basis.iter_mut().for_each(|b| *b = false);
        }
    }

    if !warm_ok {
        tab.basis = (0..k).map(Slot::Artificial).collect();
        match tab.run(true, settings) {
            Outcome::Optimal => {}
            Outcome::IterationLimit | Outcome::Singular | Outcome::Unbounded { .. } => {
                return empty_solution(k, LpStatus::NumericalFailure, tab.iterations);
            }
        }
        let infeas = tab.objective(true);
        let scale = tab_xb_scale(&data);
        if infeas > settings.feasibility_tol * scale {
            // Dual infeasible: the phase-one multipliers are a recession ray
            // of the primal. The primal is unbounded iff it is feasible.
            let ray = DVector::from_iterator(
                k,
                tab.pi.iter().zip(&data.col_scale).map(|(p, c)| p * c),
            );
            let iterations = tab.iterations;
            return match primal_feasibility(problem, settings) {
                Some(true) => {
                    let mut s = empty_solution(k, LpStatus::Unbounded, iterations);
                    s.certificate = Some(ray);
                    s
                }
                Some(false) => {
                    let mut s = empty_solution(k, LpStatus::Infeasible, iterations);
                    s.certificate = infeasibility_ray(problem, settings);
                    s
                }
                None => empty_solution(k, LpStatus::NumericalFailure, iterations),
            };
        }
        tab.drive_out_artificials();
    }

    match tab.run(false, settings) {
        Outcome::Optimal => {}
        Outcome::Unbounded {
            entering,
            direction,
        } => {
            // Dual ray: y_q = 1, y_B = -d. It satisfies G'y = 0 and h'y < 0.
            let mut y = DVector::zeros(n);
            y[entering] = data.row_scale[entering];
            for (r, slot) in tab.basis.iter().enumerate() {
                if let Slot::Row(j) = slot {
                    y[*j] = -direction[r] * data.row_scale[*j];
                }
            }
            let mut s = empty_solution(k, LpStatus::Infeasible, tab.iterations);
            s.certificate = Some(y);
            return s;
        }
        Outcome::IterationLimit | Outcome::Singular => {
            return empty_solution(k, LpStatus::NumericalFailure, tab.iterations);
        }
    }

    finish(problem, &data, &tab, settings)
}

fn tab_xb_scale(data: &Scaled) -> f64 {
    data.obj.iter().fold(1.0f64, |a, v| a.max(v.abs()))
}

/// Recovers the primal point from the final basis with a refined solve on the
/// unnormalized rows, then measures the KKT residuals.
fn finish(problem: &LpProblem, data: &Scaled, tab: &Tableau<'_>, settings: &SolverSettings) -> LpSolution {
    let k = data.k;
    let n = data.n;
    // Solve B' beta = c_B with the column-scaled original rows.
    let mut bt = DMatrix::zeros(k, k);
    let mut cb = DVector::zeros(k);
    let mut basis_rows = Vec::with_capacity(k);
    for (r, slot) in tab.basis.iter().enumerate() {
        match *slot {
            Slot::Row(j) => {
                for c in 0..k {
                    bt[(r, c)] = problem.g[(j, c)] * data.col_scale[c];
                }
                cb[r] = problem.h[j];
                basis_rows.push(j);
            }
            Slot::Artificial(i) => {
                bt[(r, i)] = 1.0;
            }
        }
    }
    let lu = bt.clone().lu();
    let mut beta = match lu.solve(&cb) {
        Some(b) if b.iter().all(|v| v.is_finite()) => b,
        _ => tab.pi.clone(),
    };
    for _ in 0..settings.refinement_steps {
        let resid = &cb - &bt * &beta;
        match lu.solve(&resid) {
            Some(delta) if delta.iter().all(|v| v.is_finite()) => beta += delta,
            _ => break,
        }
    }
    let alpha = DVector::from_iterator(k, beta.iter().zip(&data.col_scale).map(|(b, c)| b * c));

    // Dual values in original units.
    let mut y_scaled = DVector::zeros(n);
    for (r, slot) in tab.basis.iter().enumerate() {
        if let Slot::Row(j) = slot {
            y_scaled[*j] = tab.xb[r];
        }
    }
    let dual = DVector::from_iterator(n, (0..n).map(|j| y_scaled[j] * data.row_scale[j]));

    // Residuals in the scaled, row-normalized geometry.
    let mut primal = 0.0f64;
    for j in 0..n {
        let viol = if data.empty[j] {
            -data.rhs[j]
        } else {
            let gb: f64 = data.row(j).iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            gb - data.rhs[j]
        };
        primal = primal.max(viol);
    }
    let mut dual_res = DVector::from_row_slice(&data.obj);
    for j in 0..n {
        if y_scaled[j] != 0.0 {
            for (c, v) in data.row(j).iter().enumerate() {
                dual_res[c] -= y_scaled[j] * v;
            }
        }
    }
    let obj_scale = 1.0 + tab_xb_scale(data);
    let neg_y = y_scaled.iter().fold(0.0f64, |a, v| a.max(-v));
    let dual_inf = (dual_res.amax() / obj_scale).max(neg_y);
    let primal_obj: f64 = data.obj.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
    let dual_obj: f64 = (0..n).map(|j| y_scaled[j] * data.rhs[j]).sum();
    let gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs());
    let kkt = KktResiduals {
        primal_infeasibility: primal.max(0.0),
        dual_infeasibility: dual_inf,
        gap,
    };
    let status = if kkt.max() <= settings.kkt_tol {
        LpStatus::Optimal
    } else {
        LpStatus::NumericalFailure
    };
    LpSolution {
        objective_value: problem.objective.dot(&alpha),
        alpha_star: alpha,
        status,
        kkt_residuals: kkt,
        iterations: tab.iterations,
        basis: basis_rows,
        dual: Some(dual),
        certificate: None,
    }
}

/// Checks `G a <= h` for feasibility by solving the zero-objective problem.
fn primal_feasibility(problem: &LpProblem, settings: &SolverSettings) -> Option<bool> {
    let zero = LpProblem {
        objective: DVector::zeros(problem.objective.len()),
        ..problem.clone()
    };
    let mut s = settings.clone();
    s.warm_start = None;
    match solve_zero_objective(&zero, &s) {
        ZeroOutcome::Feasible => Some(true),
        ZeroOutcome::Infeasible(_) => Some(false),
        ZeroOutcome::Failed => None,
    }
}

fn infeasibility_ray(problem: &LpProblem, settings: &SolverSettings) -> Option<DVector<f64>> {
    let zero = LpProblem {
        objective: DVector::zeros(problem.objective.len()),
        ..problem.clone()
    };
    match solve_zero_objective(&zero, settings) {
        ZeroOutcome::Infeasible(y) => Some(y),
        _ => None,
    }
}

enum ZeroOutcome {
    Feasible,
    Infeasible(DVector<f64>),
    Failed,
}

/// With `m = 0` the dual is trivially feasible; phase two from the all-
/// artificial basis either finds a primal feasible vertex or a Farkas ray.
fn solve_zero_objective(problem: &LpProblem, settings: &SolverSettings) -> ZeroOutcome {
    let data = Scaled::new(problem);
    let (n, k) = (data.n, data.k);
    if let Some(j) = (0..n).find(|&j| data.empty[j] && data.rhs[j] < 0.0) {
        let mut y = DVector::zeros(n);
        y[j] = 1.0;
        return ZeroOutcome::Infeasible(y);
    }
    let mut tab = Tableau {
        data: &data,
        basis: (0..k).map(Slot::Artificial).collect(),
        in_basis: vec![false; n],
        art_sign: vec![1.0; k],
        binv: DMatrix::zeros(k, k),
        xb: DVector::zeros(k),
        pi: DVector::zeros(k),
        iterations: 0,
    };
    match tab.run(false, settings) {
        Outcome::Optimal => ZeroOutcome::Feasible,
        Outcome::Unbounded {
            entering,
            direction,
        } => {
            let mut y = DVector::zeros(n);
            y[entering] = data.row_scale[entering];
            for (r, slot) in tab.basis.iter().enumerate() {
                if let Slot::Row(j) = slot {
                    y[*j] = -direction[r] * data.row_scale[*j];
                }
            }
            ZeroOutcome::Infeasible(y)
        }
        _ => ZeroOutcome::Failed,
    }
}

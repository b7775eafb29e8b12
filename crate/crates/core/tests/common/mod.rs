#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use qlp_core::lp::LpProblem;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    Bounded,
    Unbounded,
    Infeasible,
}

/// Random dense `max m'x, G x <= h` whose status is fixed by construction.
///
/// Bounded: a strictly feasible point exists and `m = G'y` with `y >= 0`.
/// Unbounded: `x = 0` is feasible and every row is non-increasing along a ray
/// the objective increases on. Infeasible: two rows demand `a'x <= -1` and
/// `-a'x <= -1`.
pub fn random_instance<R: Rng>(rng: &mut R, kind: Construction, k: usize, n: usize) -> LpProblem {
    let mut g = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
    let (m, h) = match kind {
        Construction::Bounded => {
            let x0 = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
            let h = &g * &x0 + DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
            (g.tr_mul(&DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0))), h)
        }
        Construction::Unbounded => {
            let ray = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
            for r in 0..n {
                if g.row(r).dot(&ray.transpose()) > 0.0 {
                    g.row_mut(r).neg_mut();
                }
            }
            let m = &ray + DVector::from_fn(k, |_, _| rng.gen_range(-0.01..0.01));
            (m, DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0)))
        }
        Construction::Infeasible => {
            assert!(n >= 2);
            let a = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
            let i = rng.gen_range(0..n);
            let j = (i + 1 + rng.gen_range(0..n - 1)) % n;
            g.set_row(i, &a.transpose());
            g.set_row(j, &(-&a).transpose());
            let mut h = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
            h[i] = -1.0;
            h[j] = -1.0;
            (DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0)), h)
        }
    };
    LpProblem::new(m, g, h).unwrap()
}

pub enum Reference {
    Optimal(f64),
    Unbounded,
    Infeasible,
}

/// Solves `max c'x, G x <= h, lo <= x <= hi` with minilp.
pub fn minilp_solve(
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    bounds: (f64, f64),
) -> Result<f64, minilp::Error> {
    let mut prob = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = c.iter().map(|&ci| prob.add_var(ci, bounds)).collect();
    for r in 0..g.nrows() {
        let terms: Vec<_> = vars.iter().enumerate().map(|(j, &v)| (v, g[(r, j)])).collect();
        prob.add_constraint(terms.as_slice(), ComparisonOp::Le, h[r]);
    }
    prob.solve().map(|s| s.objective())
}

/// minilp misreports some unbounded problems with free variables, so
/// feasibility and recession directions are settled by separate bounded solves.
pub fn reference(p: &LpProblem) -> Reference {
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let zero = DVector::zeros(p.cols());
    match minilp_solve(&zero, &p.g, &p.h, free) {
        Err(minilp::Error::Infeasible) => return Reference::Infeasible,
        Err(e) => panic!("feasibility check: {e}"),
        Ok(_) => {}
    }
    let ray = minilp_solve(&p.objective, &p.g, &DVector::zeros(p.rows()), (-1.0, 1.0)).unwrap();
    if ray > 1e-9 {
        return Reference::Unbounded;
    }
    let v = minilp_solve(&p.objective, &p.g, &p.h, free).unwrap();
    assert!(v.is_finite(), "reference returned {v}");
    Reference::Optimal(v)
}

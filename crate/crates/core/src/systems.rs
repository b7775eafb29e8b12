//! Plants and stage costs.
//!
//! The learning algorithms only ever see a [`Plant`] and a [`StageCost`]
//! through their sampling methods; the built-in systems implement the same
//! traits as any user-supplied one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Deterministic discrete-time dynamics `x' = f(x, u)`.
pub trait Plant: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Nonnegative stage cost `l(x, u)`.
pub trait StageCost: Send + Sync {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64>;
}

/// Linear time-invariant plant `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("LtiPlant B rows", a.nrows(), b.nrows())?;
        if b.ncols() == 0 {
            return Err(Error::InvalidArgument("B must have at least one column".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LTI matrices"));
        }
        Ok(Self { a, b })
    }

    /// The open-loop unstable four-state benchmark with a single input.
    pub fn benchmark_4d() -> Self {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            1.8, -0.77, 0.0, 1.0,
            1.0,  0.0,  0.0, 1.0,
            1.0,  1.0,  0.0, 1.0,
            0.0,  0.0,  1.0, 0.0,
        ]);
        let b = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        Self { a, b }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl Plant for LtiPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        lti_step(self, x, u)
    }
}

/// `A x + B u`, rejecting mismatched dimensions.
pub fn lti_step(plant: &LtiPlant, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("lti_step state", plant.a.nrows(), x.len())?;
    check_dim("lti_step input", plant.b.ncols(), u.len())?;
    Ok(&plant.a * x + &plant.b * u)
}

/// The two-state, single-input nonlinear benchmark.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Nonlinear2d;

impl Plant for Nonlinear2d {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("nonlinear2d state", 2, x.len())?;
        check_dim("nonlinear2d input", 1, u.len())?;
        let next = nonlinear2d_step([x[0], x[1]], u[0])?;
        Ok(DVector::from_row_slice(&next))
    }
}

/// `((x1 + x2^2 + u) cos x2, 0.5 (x1^2 + x2 + u) sin x2)`.
pub fn nonlinear2d_step(x: [f64; 2], u: f64) -> Result<[f64; 2]> {
    if !(x[0].is_finite() && x[1].is_finite() && u.is_finite()) {
        return Err(Error::NonFinite("nonlinear2d_step input"));
    }
    let [x1, x2] = x;
    Ok([
        (x1 + x2 * x2 + u) * x2.cos(),
        0.5 * (x1 * x1 + x2 + u) * x2.sin(),
    ])
}

fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// `x'Ex + u'Fu`. A negative value means the weights are not PSD and is rejected.
pub fn quadratic_cost(
    x: &DVector<f64>,
    u: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> Result<f64> {
    check_dim("quadratic_cost state weight", e.nrows(), x.len())?;
    check_dim("quadratic_cost input weight", f.nrows(), u.len())?;
    let value = quad_form(e, x) + quad_form(f, u);
    if value < 0.0 {
        return Err(Error::NegativeCost(value));
    }
    Ok(value)
}

/// `ln(x'Ex + exp(x'Ex) u'Fu + 1)`.
pub fn nonquadratic_cost(
    x: &DVector<f64>,
    u: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> Result<f64> {
    check_dim("nonquadratic_cost state weight", e.nrows(), x.len())?;
    check_dim("nonquadratic_cost input weight", f.nrows(), u.len())?;
    let xe = quad_form(e, x);
    let uf = quad_form(f, u);
    let value = (xe + xe.exp() * uf + 1.0).ln();
    if value < 0.0 {
        return Err(Error::NegativeCost(value));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Quadratic,
    Nonquadratic,
}

impl std::str::FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "nonquadratic" => Ok(Self::Nonquadratic),
            other => Err(Error::Unknown {
                kind: "cost",
                name: other.to_string(),
            }),
        }
    }
}

/// Quadratic or log-quadratic stage cost with validated PSD weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCost {
    kind: CostKind,
    e: DMatrix<f64>,
    f: DMatrix<f64>,
}

impl WeightedCost {
    pub fn new(kind: CostKind, e: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        check_psd("state weight E", &e)?;
        check_psd("input weight F", &f)?;
        Ok(Self { kind, e, f })
    }

    /// Identity weights on `n` states and `m` inputs.
    pub fn identity(kind: CostKind, n: usize, m: usize) -> Self {
        Self {
            kind,
            e: DMatrix::identity(n, n),
            f: DMatrix::identity(m, m),
        }
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
}

impl StageCost for WeightedCost {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        match self.kind {
            CostKind::Quadratic => quadratic_cost(x, u, &self.e, &self.f),
            CostKind::Nonquadratic => nonquadratic_cost(x, u, &self.e, &self.f),
        }
    }
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be square and nonempty")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-12 * scale {
        return Err(Error::InvalidArgument(format!(
            "{name} is not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn lti_step_examples() {
        let id = LtiPlant::new(
            DMatrix::identity(4, 4),
            DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(id.step(&v(&[0.0; 4]), &v(&[0.0])).unwrap(), v(&[0.0; 4]));

        let p = LtiPlant::benchmark_4d();
        assert_eq!(
            p.step(&v(&[1.0, 0.0, 0.0, 0.0]), &v(&[0.0])).unwrap(),
            v(&[1.8, 1.0, 1.0, 0.0])
        );
        assert_eq!(
            p.step(&v(&[0.0; 4]), &v(&[1.0])).unwrap(),
            v(&[1.0, 0.0, 0.0, 0.0])
        );
    }

    #[test]
    fn lti_step_rejects_bad_dims() {
        let p = LtiPlant::benchmark_4d();
        assert!(matches!(
            p.step(&v(&[0.0; 3]), &v(&[0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            p.step(&v(&[0.0; 4]), &v(&[0.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nonlinear_examples() {
        assert_eq!(nonlinear2d_step([0.0, 0.0], 0.0).unwrap(), [0.0, 0.0]);
        assert_eq!(nonlinear2d_step([1.0, 0.0], 0.0).unwrap(), [1.0, 0.0]);
        let [a, b] = nonlinear2d_step([0.0, 1.0], 0.0).unwrap();
        assert!(close(a, 0.540302, 1e-6));
        assert!(close(b, 0.420735, 1e-6));
        assert!(nonlinear2d_step([f64::NAN, 0.0], 0.0).is_err());
    }

    #[test]
    fn cost_examples() {
        let e4 = DMatrix::identity(4, 4);
        let e2 = DMatrix::identity(2, 2);
        let f = DMatrix::identity(1, 1);
        assert_eq!(quadratic_cost(&v(&[0.0; 4]), &v(&[0.0]), &e4, &f).unwrap(), 0.0);
        assert_eq!(quadratic_cost(&v(&[1.0; 4]), &v(&[2.0]), &e4, &f).unwrap(), 8.0);
        assert_eq!(quadratic_cost(&v(&[3.0, 4.0]), &v(&[0.0]), &e2, &f).unwrap(), 25.0);

        assert_eq!(nonquadratic_cost(&v(&[0.0, 0.0]), &v(&[0.0]), &e2, &f).unwrap(), 0.0);
        let ln2 = 2f64.ln();
        assert!(close(nonquadratic_cost(&v(&[0.0, 0.0]), &v(&[1.0]), &e2, &f).unwrap(), ln2, 1e-15));
        assert!(close(nonquadratic_cost(&v(&[1.0, 0.0]), &v(&[0.0]), &e2, &f).unwrap(), ln2, 1e-15));
    }

    #[test]
    fn quadratic_cost_rejects_indefinite_weights() {
        let e = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let f = DMatrix::identity(1, 1);
        let err = quadratic_cost(&v(&[1.0, 0.0]), &v(&[0.0]), &e, &f).unwrap_err();
        assert!(matches!(err, Error::NegativeCost(_)));
        assert!(WeightedCost::new(CostKind::Quadratic, e, f).is_err());
    }

    #[test]
    fn benchmark_open_loop_eigenvalues() {
        let p = LtiPlant::benchmark_4d();
        let mut eig: Vec<_> = p.a().complex_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        let expected = [(-0.4236, -0.6048), (-0.4236, 0.6048), (0.7902, 0.0), (1.8569, 0.0)];
        for (got, (re, im)) in eig.iter().zip(expected) {
            assert!(close(got.re, re, 5e-5), "{got}");
            assert!(close(got.im, im, 5e-5), "{got}");
        }
        assert!(eig.iter().map(|z| z.norm()).fold(0.0, f64::max) > 1.0);
    }
}

//! Linear-in-parameters Q-function families.
//!
//! Every family is a quadratic form in a lifted vector `z = [phi(x); u]`
//! where `phi(x)` is either `x` or `[x; x.^2]`:
//!
//! ```text
//! Q(x, u) = z' P z + p' z + s
//! ```
//!
//! Only the upper triangle of the symmetric `P` is parameterized. Feature
//! order is fixed:
//!
//! 1. `z_i z_j` for `i <= j`, row-major over the upper triangle, with a factor
//!    of 2 on off-diagonal products so that `alpha_k = P_ij` directly;
//! 2. (extended quadratic only) the linear terms `z_1 .. z_d`;
//! 3. (extended quadratic only) the constant 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Smallest admissible eigenvalue of `P_uu` for the greedy minimizer.
pub const DEFINITENESS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `[x;u]' P [x;u] + p [x;u] + s`
    ExtendedQuadratic,
    /// `[x;u]' P [x;u]`
    PureQuadratic,
    /// `[x;x^2;u]' P [x;x^2;u]`
    Quartic,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ExtendedQuadratic => "extended_quadratic",
            Self::PureQuadratic => "pure_quadratic",
            Self::Quartic => "quartic",
        }
    }

    fn lift(self) -> StateLift {
        match self {
            Self::Quartic => StateLift::WithSquares,
            _ => StateLift::Identity,
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extended_quadratic" => Ok(Self::ExtendedQuadratic),
            "pure_quadratic" => Ok(Self::PureQuadratic),
            "quartic" => Ok(Self::Quartic),
            other => Err(Error::Unknown {
                kind: "basis family",
                name: other.to_string(),
            }),
        }
    }
}

/// How the state enters the lifted vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateLift {
    /// `phi(x) = x`
    Identity,
    /// `phi(x) = [x; x.^2]`
    WithSquares,
}

impl StateLift {
    pub fn dim(self, n: usize) -> usize {
        match self {
            Self::Identity => n,
            Self::WithSquares => 2 * n,
        }
    }

    pub fn apply_into(self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out[..n].copy_from_slice(x);
        if self == Self::WithSquares {
            for (o, v) in out[n..2 * n].iter_mut().zip(x) {
                *o = v * v;
            }
        }
    }

    pub fn apply(self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim(x.len()));
        self.apply_into(x.as_slice(), out.as_mut_slice());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    /// `z_i z_j` (times 2 when `i != j`), `i <= j`.
    Product(usize, usize),
    Linear(usize),
    Constant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisFamily {
    kind: BasisKind,
    state_dim: usize,
    input_dim: usize,
    features: Vec<Feature>,
}

impl BasisFamily {
    pub fn new(kind: BasisKind, state_dim: usize, input_dim: usize) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument(
                "basis dimensions must be positive".into(),
            ));
        }
        let d = kind.lift().dim(state_dim) + input_dim;
        let mut features = Vec::with_capacity(d * (d + 1) / 2 + d + 1);
        for i in 0..d {
            for j in i..d {
                features.push(Feature::Product(i, j));
            }
        }
        if kind == BasisKind::ExtendedQuadratic {
            features.extend((0..d).map(Feature::Linear));
            features.push(Feature::Constant);
        }
        Ok(Self {
            kind,
            state_dim,
            input_dim,
            features,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn lift(&self) -> StateLift {
        self.kind.lift()
    }

    /// Length of `phi(x)`.
    pub fn state_feature_dim(&self) -> usize {
        self.lift().dim(self.state_dim)
    }

    /// Length of `z = [phi(x); u]`.
    pub fn lifted_dim(&self) -> usize {
        self.state_feature_dim() + self.input_dim
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn features_list(&self) -> &[Feature] {
        &self.features
    }

    pub fn has_affine_terms(&self) -> bool {
        self.kind == BasisKind::ExtendedQuadratic
    }

    /// Index of the feature multiplying `P_ij`.
    pub fn product_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let d = self.lifted_dim();
        i * d - i * i.saturating_sub(1) / 2 + (j - i)
    }

    /// Total polynomial degree in `(x, u)` of lifted coordinate `i`.
    pub fn coordinate_degree(&self, i: usize) -> u32 {
        let n = self.state_dim;
        match self.lift() {
            StateLift::WithSquares if (n..2 * n).contains(&i) => 2,
            _ => 1,
        }
    }

    /// Index of lifted coordinate `i` among the degree-one variables `(x, u)`.
    fn base_variable(&self, i: usize) -> usize {
        let n = self.state_dim;
        match self.lift() {
            // squares never appear in degree-two products; inputs shift down by n
            StateLift::WithSquares if i >= n => i - n,
            _ => i,
        }
    }

    pub fn feature_degree(&self, feature: Feature) -> u32 {
        match feature {
            Feature::Product(i, j) => self.coordinate_degree(i) + self.coordinate_degree(j),
            Feature::Linear(i) => self.coordinate_degree(i),
            Feature::Constant => 0,
        }
    }

    fn coordinate_name(&self, i: usize) -> String {
        let n = self.state_dim;
        let nphi = self.state_feature_dim();
        if i < n {
            format!("x{}", i + 1)
        } else if i < nphi {
            format!("x{}^2", i - n + 1)
        } else {
            format!("u{}", i - nphi + 1)
        }
    }

    /// Human-readable monomial for every feature, in feature order.
    pub fn descriptors(&self) -> Vec<String> {
        self.features
            .iter()
            .map(|f| match *f {
                Feature::Product(i, j) if i == j => {
                    format!("{}*{}", self.coordinate_name(i), self.coordinate_name(i))
                }
                Feature::Product(i, j) => {
                    format!("2*{}*{}", self.coordinate_name(i), self.coordinate_name(j))
                }
                Feature::Linear(i) => self.coordinate_name(i),
                Feature::Constant => "1".to_string(),
            })
            .collect()
    }

    fn check_xu(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_dim("basis state", self.state_dim, x.len())?;
        check_dim("basis input", self.input_dim, u.len())
    }

    /// Lifted vector `z = [phi(x); u]`.
    pub fn lifted(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check_xu(x, u)?;
        let mut z = DVector::zeros(self.lifted_dim());
        self.lift_into(x, u, z.as_mut_slice());
        Ok(z)
    }

    fn lift_into(&self, x: &[f64], u: &[f64], z: &mut [f64]) {
        let nphi = self.state_feature_dim();
        self.lift().apply_into(x, &mut z[..nphi]);
        z[nphi..].copy_from_slice(u);
    }

    /// Writes the feature vector into `out` (length `K`). `z` is scratch of
    /// length `lifted_dim`.
    pub(crate) fn features_into(&self, x: &[f64], u: &[f64], z: &mut [f64], out: &mut [f64]) {
        self.lift_into(x, u, z);
        for (o, f) in out.iter_mut().zip(&self.features) {
            *o = match *f {
                Feature::Product(i, j) if i == j => z[i] * z[i],
                Feature::Product(i, j) => 2.0 * z[i] * z[j],
                Feature::Linear(i) => z[i],
                Feature::Constant => 1.0,
            };
        }
    }

    pub fn features(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check_xu(x, u)?;
        let mut z = vec![0.0; self.lifted_dim()];
        let mut out = DVector::zeros(self.feature_count());
        self.features_into(x, u, &mut z, out.as_mut_slice());
        Ok(out)
    }
}

/// Coefficient vector of a Q-function in a given family.
#[derive(Debug, Clone, PartialEq)]
pub struct QParams {
    family: BasisFamily,
    alpha: DVector<f64>,
}

impl QParams {
    pub fn new(family: BasisFamily, alpha: DVector<f64>) -> Result<Self> {
        check_dim("QParams alpha", family.feature_count(), alpha.len())?;
        Ok(Self { family, alpha })
    }

    pub fn zeros(family: BasisFamily) -> Self {
        let alpha = DVector::zeros(family.feature_count());
        Self { family, alpha }
    }

    /// Packs symmetric blocks into a coefficient vector. The upper triangle of
    /// `p` is used; affine terms must be zero for families without them.
    pub fn from_blocks(family: BasisFamily, blocks: &QBlocks) -> Result<Self> {
        let d = family.lifted_dim();
        check_dim("QBlocks P rows", d, blocks.p.nrows())?;
        check_dim("QBlocks P cols", d, blocks.p.ncols())?;
        check_dim("QBlocks p", d, blocks.lin.len())?;
        if !family.has_affine_terms() && (blocks.lin.amax() != 0.0 || blocks.s != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "family {} has no linear or constant terms",
                family.kind().name()
            )));
        }
        let alpha = DVector::from_iterator(
            family.feature_count(),
            family.features.iter().map(|f| match *f {
                Feature::Product(i, j) => blocks.p[(i, j)],
                Feature::Linear(i) => blocks.lin[i],
                Feature::Constant => blocks.s,
            }),
        );
        Ok(Self { family, alpha })
    }

    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn into_alpha(self) -> DVector<f64> {
        self.alpha
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(self.alpha.dot(&self.family.features(x, u)?))
    }

    pub fn blocks(&self) -> QBlocks {
        extract_blocks(self)
    }

    pub fn greedy(&self) -> Result<FeedbackPolicy> {
        greedy_policy(self)
    }
}

/// `alpha . features(x, u)`.
pub fn eval_q(params: &QParams, x: &[f64], u: &[f64]) -> Result<f64> {
    params.eval(x, u)
}

/// Symmetric matrix, linear and constant parts of a Q-function, with the
/// state/input partition given by `input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct QBlocks {
    pub p: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub s: f64,
    pub input_dim: usize,
}

impl QBlocks {
    fn split(&self) -> usize {
        self.p.nrows() - self.input_dim
    }

    pub fn pxx(&self) -> DMatrix<f64> {
        let k = self.split();
        self.p.view((0, 0), (k, k)).into_owned()
    }

    pub fn pxu(&self) -> DMatrix<f64> {
        let k = self.split();
        self.p.view((0, k), (k, self.input_dim)).into_owned()
    }

    pub fn pux(&self) -> DMatrix<f64> {
        let k = self.split();
        self.p.view((k, 0), (self.input_dim, k)).into_owned()
    }

    pub fn puu(&self) -> DMatrix<f64> {
        let k = self.split();
        self.p
            .view((k, k), (self.input_dim, self.input_dim))
            .into_owned()
    }

    pub fn lin_x(&self) -> DVector<f64> {
        self.lin.rows(0, self.split()).into_owned()
    }

    pub fn lin_u(&self) -> DVector<f64> {
        self.lin.rows(self.split(), self.input_dim).into_owned()
    }
}

/// Rebuilds the symmetric `P`, `p` and `s` from the coefficient vector.
pub fn extract_blocks(params: &QParams) -> QBlocks {
    let family = &params.family;
    let d = family.lifted_dim();
    let mut p = DMatrix::zeros(d, d);
    let mut lin = DVector::zeros(d);
    let mut s = 0.0;
    for (a, f) in params.alpha.iter().zip(&family.features) {
        match *f {
            Feature::Product(i, j) => {
                p[(i, j)] = *a;
                p[(j, i)] = *a;
            }
            Feature::Linear(i) => lin[i] = *a,
            Feature::Constant => s = *a,
        }
    }
    QBlocks {
        p,
        lin,
        s,
        input_dim: family.input_dim,
    }
}

/// Affine state feedback `u = K phi(x) + k0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    gain: DMatrix<f64>,
    offset: DVector<f64>,
    lift: StateLift,
    state_dim: usize,
}

impl FeedbackPolicy {
    pub fn new(
        gain: DMatrix<f64>,
        offset: DVector<f64>,
        lift: StateLift,
        state_dim: usize,
    ) -> Result<Self> {
        check_dim("policy gain columns", lift.dim(state_dim), gain.ncols())?;
        check_dim("policy offset", gain.nrows(), offset.len())?;
        Ok(Self {
            gain,
            offset,
            lift,
            state_dim,
        })
    }

    /// Linear gain on the family's state features, no offset.
    pub fn linear(family: &BasisFamily, gain: DMatrix<f64>) -> Result<Self> {
        check_dim("policy gain rows", family.input_dim(), gain.nrows())?;
        let offset = DVector::zeros(gain.nrows());
        Self::new(gain, offset, family.lift(), family.state_dim())
    }

    /// The policy that always returns zero.
    pub fn zero(family: &BasisFamily) -> Self {
        Self {
            gain: DMatrix::zeros(family.input_dim(), family.state_feature_dim()),
            offset: DVector::zeros(family.input_dim()),
            lift: family.lift(),
            state_dim: family.state_dim(),
        }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn input_dim(&self) -> usize {
        self.gain.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Writes `u(x)` into `u`; `phi` is scratch of the lifted state length.
    pub(crate) fn control_into(&self, x: &[f64], phi: &mut [f64], u: &mut [f64]) {
        self.lift.apply_into(x, phi);
        for (r, ur) in u.iter_mut().enumerate() {
            let mut acc = self.offset[r];
            for (c, p) in phi.iter().enumerate() {
                acc += self.gain[(r, c)] * p;
            }
            *ur = acc;
        }
    }

    pub fn control(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("policy state", self.state_dim, x.len())?;
        let mut phi = vec![0.0; self.lift.dim(self.state_dim)];
        let mut u = DVector::zeros(self.input_dim());
        self.control_into(x, &mut phi, u.as_mut_slice());
        Ok(u)
    }
}

/// Closed-form minimizer of `u -> Q(x, u)`:
/// `u = -P_uu^{-1} (P_ux phi(x) + p_u / 2)`.
pub fn greedy_policy(params: &QParams) -> Result<FeedbackPolicy> {
    let blocks = extract_blocks(params);
    let puu = blocks.puu();
    let min_eig = if puu.nrows() == 1 {
        puu[(0, 0)]
    } else {
        puu.clone().symmetric_eigenvalues().min()
    };
    if !(min_eig > DEFINITENESS_TOL) {
        return Err(Error::PolicyUndefined {
            eigenvalue: min_eig,
            tuple: None,
        });
    }
    let chol = puu.cholesky().ok_or(Error::PolicyUndefined {
        eigenvalue: min_eig,
        tuple: None,
    })?;
    let gain = -chol.solve(&blocks.pux());
    let offset = -chol.solve(&(blocks.lin_u() * 0.5));
    let family = params.family();
    FeedbackPolicy::new(gain, offset, family.lift(), family.state_dim())
}

/// Greedy action at a single state.
pub fn greedy_action(params: &QParams, x: &[f64]) -> Result<DVector<f64>> {
    greedy_policy(params)?.control(x)
}

/// Moments of the state-action relevance measure over the degree-one
/// variables `(x, u)`.
///
/// `third` and `fourth` list the moments attached to every entry of the full
/// `P` matrix whose monomial has total degree three (resp. four), in
/// row-major order over `P`. Off-diagonal entries therefore appear twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub first: Vec<f64>,
    /// Covariance of `(x, u)`; the raw second moment is `second + first first'`.
    pub second: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub third: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourth: Option<Vec<f64>>,
}

impl MomentSpec {
    /// Zero mean, identity covariance over `dim` variables.
    pub fn standard(dim: usize) -> Self {
        Self {
            first: vec![0.0; dim],
            second: (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            third: None,
            fourth: None,
        }
    }

    pub fn with_higher(mut self, third: Vec<f64>, fourth: Vec<f64>) -> Self {
        self.third = Some(third);
        self.fourth = Some(fourth);
        self
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let d = self.second.len();
        if self.second.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("second moment must be square".into()));
        }
        Ok(DMatrix::from_fn(d, d, |i, j| self.second[i][j]))
    }

    pub fn validate(&self, family: &BasisFamily) -> Result<()> {
        let nvars = family.state_dim() + family.input_dim();
        check_dim("moment first", nvars, self.first.len())?;
        let cov = self.covariance()?;
        check_dim("moment second", nvars, cov.nrows())?;
        if (&cov - cov.transpose()).amax() > 0.0 {
            return Err(Error::InvalidArgument("second moment is not symmetric".into()));
        }
        if cov.cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "second moment is not positive definite".into(),
            ));
        }
        let (n3, n4) = higher_entry_counts(family);
        if n3 > 0 {
            let third = self.third.as_ref().ok_or(Error::MissingMoment(3))?;
            check_dim("moment third", n3, third.len())?;
        }
        if n4 > 0 {
            let fourth = self.fourth.as_ref().ok_or(Error::MissingMoment(4))?;
            check_dim("moment fourth", n4, fourth.len())?;
        }
        Ok(())
    }
}

/// Row-major positions of full-matrix entries of a given total degree.
fn entries_of_degree(family: &BasisFamily, degree: u32) -> Vec<(usize, usize)> {
    let d = family.lifted_dim();
    (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| family.coordinate_degree(i) + family.coordinate_degree(j) == degree)
        .collect()
}

/// Number of full `P` entries of degree three and four.
pub fn higher_entry_counts(family: &BasisFamily) -> (usize, usize) {
    (
        entries_of_degree(family, 3).len(),
        entries_of_degree(family, 4).len(),
    )
}

/// Objective coefficients `m` with `m' alpha = E_c[Q]`.
pub fn objective_vector(family: &BasisFamily, moments: &MomentSpec) -> Result<DVector<f64>> {
    moments.validate(family)?;
    let cov = moments.covariance()?;
    let mu = &moments.first;
    let third = entries_of_degree(family, 3);
    let fourth = entries_of_degree(family, 4);
    let lookup = |table: &[(usize, usize)], values: &Option<Vec<f64>>, deg: u32, i, j| {
        let values = values.as_ref().ok_or(Error::MissingMoment(deg))?;
        let pos = |a, b| table.iter().position(|&e| e == (a, b)).expect("entry of degree");
        let mut v = values[pos(i, j)];
        if i != j {
            v += values[pos(j, i)];
        }
        Ok::<f64, Error>(v)
    };
    let mut m = DVector::zeros(family.feature_count());
    for (k, f) in family.features.iter().enumerate() {
        m[k] = match *f {
            Feature::Constant => 1.0,
            Feature::Linear(i) => mu[family.base_variable(i)],
            Feature::Product(i, j) => match family.feature_degree(*f) {
                2 => {
                    let (a, b) = (family.base_variable(i), family.base_variable(j));
                    let raw = cov[(a, b)] + mu[a] * mu[b];
                    if i == j {
                        raw
                    } else {
                        2.0 * raw
                    }
                }
                3 => lookup(&third, &moments.third, 3, i, j)?,
                4 => lookup(&fourth, &moments.fourth, 4, i, j)?,
                other => unreachable!("feature degree {other}"),
            },
        };
    }
    Ok(m)
}

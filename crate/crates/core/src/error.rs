use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative stage cost {0}: weight matrices are not positive semidefinite")]
    NegativeCost(f64),

    /// The input block of the Q matrix is not positive definite, so the greedy
    /// minimizer does not exist.
    #[error("greedy policy undefined: smallest eigenvalue of P_uu is {eigenvalue:e}{}", tuple.map(|b| format!(" (at buffer tuple {b})")).unwrap_or_default())]
    PolicyUndefined {
        eigenvalue: f64,
        tuple: Option<usize>,
    },

    #[error("missing moment data for degree-{0} features")]
    MissingMoment(u32),

    #[error("buffer construction aborted after {resamples} resamples of non-finite transitions")]
    TooManyResamples { resamples: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("LP is unbounded: initial policy likely not stabilizing or buffer lacks excitation")]
    LpUnbounded,

    #[error("LP is infeasible")]
    LpInfeasible,

    #[error("LP solver failed: {0}")]
    LpNumerical(String),

    #[error("Riccati recursion did not converge in {iterations} iterations (last change {last_change:e})")]
    RiccatiNotConverged { iterations: usize, last_change: f64 },

    #[error("trajectory diverged at step {step} (state norm {norm:e})")]
    DivergedTrajectory { step: usize, norm: f64 },

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

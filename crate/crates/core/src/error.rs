use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no real root of the update equation at node {node}")]
    NoRealRoot { node: usize },

    #[error("cost decreased at iteration {iteration}: delta J = {delta:e}")]
    NonMonotone { iteration: usize, delta: f64 },

    #[error("basis truncation too small: weight {weight:e} at j_max")]
    TruncationTooSmall { weight: f64 },

    #[error("frequency {requested:e} exceeds the Nyquist limit {nyquist:e}")]
    AboveNyquist { requested: f64, nyquist: f64 },

    #[error("non-Hermitian density matrix (asymmetry {0:e})")]
    NonHermitian(f64),
}

impl Error {
    /// Stable machine-readable tag, used in run summaries.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidConfig(_) => "invalid-config",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NoRealRoot { .. } => "no-real-root",
            Error::NonMonotone { .. } => "non-monotone-step",
            Error::TruncationTooSmall { .. } => "truncation-too-small",
            Error::AboveNyquist { .. } => "band-exceeds-nyquist",
            Error::NonHermitian(_) => "non-hermitian",
        }
    }

    /// Numerical failures, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NoRealRoot { .. } | Error::NonMonotone { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the model, estimator, tuning and inference layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("conditional variance is non-positive ({value:e}) at t = {t}")]
    NonPositiveVariance { t: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameters lie outside the stationary region (persistence {persistence})")]
    NonStationary { persistence: f64 },

    #[error("root bracketing failed: {0}")]
    BracketFailure(String),

    #[error("all control-variate residuals are zero")]
    DegenerateResiduals,

    #[error("variance estimate undefined for subsample size m = {m} (need m >= 2)")]
    UndefinedVariance { m: usize },

    #[error("no feasible tail floor: even m = T violates the variance tolerance")]
    Infeasible,

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("Hessian is singular: {floored} of {dim} eigenvalues needed flooring")]
    SingularHessian { floored: usize, dim: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input series is empty")]
    EmptySeries,

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors that signal an invalid parameter proposal rather than a bug or bad input.
    pub fn is_rejection(&self) -> bool {
        matches!(self, Error::NonPositiveVariance { .. } | Error::NonStationary { .. } | Error::Domain(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

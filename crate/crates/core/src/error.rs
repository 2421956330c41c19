use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid daylight window [{start}, {end}) for horizon {horizon}")]
    InvalidWindow {
        start: usize,
        end: usize,
        horizon: usize,
    },

    #[error("degenerate constraint at step {t}: 1'Ω⁻¹1 = {denominator:e}")]
    DegenerateConstraint { t: usize, denominator: f64 },

    #[error("backward recursion produced non-finite values at step {t}")]
    NonFiniteRecursion { t: usize },

    #[error("simulated state became non-finite at step {t}")]
    NonFiniteState { t: usize },

    #[error("time index {t} out of range (horizon {horizon})")]
    IndexOutOfRange { t: usize, horizon: usize },

    #[error("KKT system is singular or ill-posed")]
    SingularKkt,

    #[error("rollout of path {path} failed: {source}")]
    PathFailed {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 for configuration and validation problems, 2 for numerical failures.
    /// Verification failures (code 3) are reported by the caller, not raised
    /// as errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::ConfigParse { .. }
            | Error::Validation(_)
            | Error::InvalidWindow { .. }
            | Error::EmptyInput(_)
            | Error::DimensionMismatch { .. }
            | Error::NotSymmetric { .. }
            | Error::Io(_)
            | Error::Csv(_) => 1,
            Error::PathFailed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

// SPDX-License-Identifier: Apache-2.0
//! Error type shared by every estimator in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("column {0} has zero empirical variance")]
    ZeroVarianceColumn(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("covariance has a negative eigenvalue ({0:e}) below tolerance")]
    NonPositiveDefiniteInput(f64),

    #[error("sample covariance is singular")]
    SingularCovariance,

    #[error("Hessian sub-block H_SS is numerically singular")]
    SingularSubBlock,

    #[error("non-positive diagonal entry at index {0}")]
    NonPositiveDiagonal(usize),

    #[error("degenerate residual: noise level {0:e} below 1e-10")]
    DegenerateResidual(f64),

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },

    #[error("provenance mismatch: expected {expected}, found {found}")]
    ProvenanceMismatch { expected: String, found: String },

    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("missing nodewise fit for column {0}")]
    MissingColumn(usize),

    #[error("exhaustive ordering search supports p <= 9, got p = {0}")]
    TooLargeForExhaustive(usize),

    #[error("every fit on the tuning grid failed")]
    AllFitsFailed,

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (as opposed to malformed input). The CLI maps
    /// these to exit code 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::NonPositiveDefiniteInput(_)
                | Error::SingularCovariance
                | Error::SingularSubBlock
                | Error::NonPositiveDiagonal(_)
                | Error::DegenerateResidual(_)
                | Error::NotConverged { .. }
                | Error::AllFitsFailed
                | Error::TooManyFailures { .. }
        )
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by meshing, assembly, solvers and the adaptation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate element {element}: signed area {area}")]
    DegenerateElement { element: usize, area: f64 },

    #[error("mesh hierarchy mismatch: {0}")]
    HierarchyMismatch(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("nonlinear solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    Nonconvergence {
        iterations: usize,
        residual: f64,
        /// Coefficients of the last iterate, for diagnostics.
        last_iterate: Vec<f64>,
    },

    #[error("effectivity denominator ill-conditioned: |J_ref - J_h| = {denominator:.3e}")]
    IllConditionedEffectivity { denominator: f64 },

    #[error("metric tensor at element {element} is not positive definite")]
    InvalidMetric { element: usize },

    #[error("all error indicators vanish; metric scaling undefined")]
    DegenerateIndicator,

    #[error("remeshing failed: {0}")]
    RemeshFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

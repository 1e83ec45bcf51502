use thiserror::Error;

use crate::geometry::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({}, {}) lies outside the meshed domain", .0.x, .0.y)]
    PointOutsideDomain(Point),

    #[error("{solver} did not converge after {iterations} iterations (final residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("matrix is singular to working precision (pivot {pivot:e} at row {row})")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("nonlinearity `{label}` returned a non-finite value at y = {y}")]
    NonlinearityEvaluation { label: String, y: f64 },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("optimization failed at outer iteration {iteration}: {source}")]
    Optimization {
        iteration: usize,
        /// Control at the last accepted iterate.
        last_control: Vec<f64>,
        source: Box<Error>,
    },

    #[error("mesh level n = {n}: {source}")]
    AtLevel { n: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn is_no_convergence(&self) -> bool {
        matches!(self, Error::NoConvergence { .. })
    }
}

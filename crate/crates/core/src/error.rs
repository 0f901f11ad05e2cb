use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("profile gradient is singular at ({t}, {z})")]
    SingularEvaluation { t: f64, z: f64 },

    #[error("point {0:?} lies outside the grid box")]
    OutOfDomain(Vec<f64>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no domain-variation root at {point:?}")]
    NoRoot { point: Vec<f64> },

    #[error("H = {value:e} below threshold at r = {radius}")]
    DegenerateHeight { radius: f64, value: f64 },

    #[error("not enough sample nodes: {0}")]
    InsufficientSamples(String),

    #[error("empty interface")]
    EmptyInterface,

    #[error("interface is not a graph over x' in the window: {0}")]
    NotGraphable(String),

    #[error("no finite sandwich width up to {limit}")]
    NoFiniteFlatness { limit: f64 },

    #[error("{what} did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("field file {path}: {reason}")]
    FieldFormat { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// True for failures caused by inputs that violate an operation's
    /// preconditions (as opposed to numerical breakdown or I/O).
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::Precondition(_)
                | Error::OutOfDomain(_)
                | Error::SingularEvaluation { .. }
                | Error::NoRoot { .. }
                | Error::DegenerateHeight { .. }
                | Error::InsufficientSamples(_)
                | Error::EmptyInterface
                | Error::NotGraphable(_)
                | Error::NoFiniteFlatness { .. }
                | Error::InvalidParameter(_)
                | Error::Unsupported(_)
        )
    }

    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }
}

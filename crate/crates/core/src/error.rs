use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("eigensolver did not converge for dim {dim} (off-diagonal residual {residual:e})")]
    NoConvergence { dim: usize, residual: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown class {0}")]
    UnknownClass(u32),

    #[error("class {0} has no samples")]
    EmptyClass(u32),

    #[error("class {0} is missing from the score table input")]
    MissingClass(u32),

    #[error("eigenvalue spectrum sums to zero")]
    ZeroSpectrum,

    #[error("none of the candidate head classes appear in the ranking of class {0}")]
    NoHeadClass(u32),

    #[error("argument {name} = {value} outside domain {domain}")]
    OutOfDomain { name: &'static str, value: f64, domain: &'static str },

    #[error("head-class pool is empty")]
    InsufficientHeadData,

    #[error("tail class {0} has no matched head geometry")]
    UnmatchedTail(u32),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { loss: f64, step: usize },

    #[error("need at least two models, got {0}")]
    InsufficientModels(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("inconsistent dimension at row {row}: expected {expected} values, found {found}")]
    DimensionInconsistent { row: usize, expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig(message.into())
    }
}

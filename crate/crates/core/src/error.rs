use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("curvature must be finite and negative, got {0}")]
    InvalidCurvature(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("degenerate combination: weighted sum has zero Lorentzian norm")]
    DegenerateCentroid,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 2]),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("manifold violation {violation:e} exceeds tolerance {tol:e} at {site}")]
    ManifoldViolation {
        site: String,
        violation: f64,
        tol: f64,
    },

    #[error("no transport plan: supports lie in different connected components")]
    Disconnected,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize, dump: Option<PathBuf> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

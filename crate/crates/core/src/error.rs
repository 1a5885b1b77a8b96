use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape { op: &'static str, expected: (usize, usize), got: (usize, usize) },

    #[error("svd did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn layer(layer: usize, msg: impl Into<String>) -> Self {
        Error::Layer { layer, message: msg.into() }
    }
}

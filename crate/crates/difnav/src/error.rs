//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("attention mask row {0} is fully masked")]
    DegenerateMask(usize),
    #[error("unknown token id {0} (vocabulary size {1})")]
    UnknownToken(usize, usize),
    #[error("endpoint ({0:.3}, {1:.3}) lies in an occupied cell")]
    InvalidEndpoint(f64, f64),
    #[error("episode generation failed: {0}")]
    EpisodeGeneration(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u16, expected: u16 },
    #[error("malformed file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn malformed(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            message: message.into(),
        }
    }
}

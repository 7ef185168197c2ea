use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid rank {rank}: must lie in [{min}, {max}]")]
    InvalidRank { rank: usize, min: usize, max: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("dimensionality error: reduced width {m_tilde} must be < {m}")]
    Dimensionality { m_tilde: usize, m: usize },
    #[error("insufficient anchor rows: {rows} < {needed}")]
    InsufficientAnchor { rows: usize, needed: usize },
    #[error("invalid label {label}: expected class index below {num_classes}")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("AUC undefined: labels contain a single class")]
    UndefinedAuc,
    #[error("missing capability: {0}")]
    MissingCapability(String),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("session aborted: {0}")]
    SessionAborted(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

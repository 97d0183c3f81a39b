//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operation received operands whose shapes do not line up.
    /// `detail` names the operation and the offending dimension.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A model spec failed validation (bad widths, cardinality, dilation...).
    #[error("invalid model spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },

    /// Attack parameters out of range (epsilon < 0, zero iterations...).
    #[error("invalid attack config: {0}")]
    InvalidAttack(String),

    /// Dataset construction or ingestion failed.
    #[error("data error: {0}")]
    Data(String),

    /// A configuration file could not be parsed or contained bad values.
    #[error("config error: {0}")]
    Config(String),

    /// A serialized container (checkpoint, adversarial set) is malformed.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// A plan referenced a checkpoint that does not exist on disk.
    #[error("missing checkpoint for model `{model}` variant `{variant}` (expected {path})")]
    MissingCheckpoint {
        model: String,
        variant: String,
        path: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}

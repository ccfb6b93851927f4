//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by colorspace, model, attack and defense operations.
#[derive(Debug, Error)]
pub enum LumaError {
    /// An input batch carried the wrong color-space or scale tag.
    #[error("wrong color space or scale: expected {expected}, got {got}")]
    WrongSpace { expected: String, got: String },

    /// Shapes of two batches (or a batch and a model) do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value is out of its allowed range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A label index is outside `0..n_classes`.
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    /// Operation needs a non-empty dataset or batch.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Checkpoint or dataset file could not be read or parsed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A network was used before it was trained.
    #[error("untrained network: {0}")]
    Untrained(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LumaError>;

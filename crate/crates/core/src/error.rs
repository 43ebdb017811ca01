//! Crate-wide error type.
//!
//! Short, stable messages double as part of the external contract: callers
//! (and the CLI's exit-code mapping) match on the variant, while the rendered
//! strings surface in logs and test assertions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Vocabulary construction saw no tokens at all.
    #[error("empty corpus")]
    EmptyCorpus,

    /// A text tokenized to zero tokens.
    #[error("empty text")]
    EmptyText,

    /// The substitution search exhausted every candidate.
    #[error("no admissible modification")]
    NoAdmissibleModification,

    /// Non-finite loss or gradients during optimization.
    #[error("diverged")]
    Diverged,

    /// A stored noise set does not fit the dataset it is applied to.
    #[error("corrupt noise set: {0}")]
    CorruptNoiseSet(String),

    /// A configuration value failed validation; `field` is the dotted path.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// Array shapes disagree (embedding dim vs. gradient dim, etc.).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Instance-level validation failure (labels, spans, token ids, ids).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A checkpoint could not be written or read back consistently.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Convenience constructor for config validation failures.
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;

use thiserror::Error;

/// Errors raised anywhere in the nulling pipeline.
#[derive(Debug, Error)]
pub enum SnapError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// A value violates a data-model invariant. `context` names the offending
    /// record or field.
    #[error("validation error ({context}): {message}")]
    Validation { context: String, message: String },

    #[error("bad magic: expected \"SNAPEMB1\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated input in record {record} at byte offset {offset}")]
    Truncated { record: usize, offset: usize },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch ({context}): expected {expected}, found {found}")]
    DimMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("subspace rank {k} out of range (maximum {max})")]
    RankOutOfRange { k: usize, max: usize },

    #[error("centered centroids have rank {achievable}, below requested k = {requested}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("invalid label {0}: labels must be 0 or 1")]
    InvalidLabel(u8),

    #[error("training diverged: non-finite loss or parameters at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("config: {0}")]
    Config(String),
}

impl SnapError {
    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        SnapError::Validation {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SnapError>;

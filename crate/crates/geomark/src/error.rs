//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by geometry, watermarking, simulation, and persistence code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector: L2 norm is not positive")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("vector component is not finite")]
    NonFinite,

    #[error("invalid dimension {0}: need at least 2 components")]
    InvalidDimension(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("rho {0} out of range: must lie in (0, 1)")]
    RhoOutOfRange(f64),

    #[error("too few points: need {needed}, got {actual}")]
    TooFewPoints { needed: usize, actual: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("embedding set is too small (need at least 2 entries)")]
    EmptySet,

    #[error("too few embeddings: need {needed} for target plus anchors, got {actual}")]
    TooFewEmbeddings { needed: usize, actual: usize },

    #[error("degenerate radius for anchor {anchor_index}: tau = {tau:e}")]
    DegenerateRadius { anchor_index: usize, tau: f64 },

    #[error(
        "insufficient samples: requested {requested_backdoor} backdoor / {requested_benign} \
         benign, available {available_backdoor} / {available_benign}"
    )]
    InsufficientSamples {
        requested_backdoor: usize,
        requested_benign: usize,
        available_backdoor: usize,
        available_benign: usize,
    },

    #[error("empty group: both verification groups must be nonempty")]
    EmptyGroup,

    #[error("query failure for id {0}")]
    QueryFailure(String),

    #[error("id mismatch between sets: {0}")]
    IdMismatch(String),

    #[error("keep={keep} out of range: must lie in [2, {dim}]")]
    KeepOutOfRange { keep: usize, dim: usize },

    #[error("bad dimensions: {0}")]
    BadDims(String),

    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

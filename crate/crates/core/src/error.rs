use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("corpus is empty: {0}")]
    EmptyCorpus(String),

    #[error("unknown command `{0}`")]
    UnknownCommand(String),

    #[error("command id {id} is outside a vocabulary of {size}")]
    CommandOutOfRange { id: usize, size: usize },

    #[error("insufficient data: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("cannot split: {0}")]
    Split(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need at least {needed} commands of context, got {got}")]
    NoContext { needed: usize, got: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("loss is not finite")]
    NonFiniteLoss,

    #[error("vocabulary hash mismatch: model has {expected}, corpus has {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("unsupported model file: {0}")]
    Format(String),

    #[error("run with seed {seed} failed: {source}")]
    RunFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

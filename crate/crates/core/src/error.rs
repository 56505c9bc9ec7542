use thiserror::Error;

/// Errors raised by the topic-model library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary is empty after filtering (min_df={min_df}, max_df_frac={max_df_frac}); loosen the filters")]
    EmptyVocabulary { min_df: usize, max_df_frac: f64 },

    #[error("every document was removed by the filter requiring {min_types} distinct word types")]
    NoDocuments { min_types: usize },

    #[error("batch normalization needs at least 2 rows in training mode, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("adversarial augmentation diverged in the {phase} phase at step {step}")]
    Divergence { phase: &'static str, step: usize },

    #[error("document {row} has {present} present words, fewer than the {t} to replace")]
    TooFewWords {
        row: usize,
        present: usize,
        t: usize,
    },

    #[error("variant `{variant}` needs {what}")]
    MissingSamples { variant: String, what: &'static str },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

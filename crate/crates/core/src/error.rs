use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration: bad hyperparameter, incompatible shapes for an
    /// op, unknown vocabulary entry, and similar setup-time problems.
    #[error("config: {0}")]
    Config(String),

    /// An operation was called in a way its contract forbids (non-scalar
    /// loss, incomplete bundle, single-layer node set, ...).
    #[error("usage: {0}")]
    Usage(String),

    /// Task generation could not satisfy a constraint within the retry
    /// budget.
    #[error("generation: {0}")]
    Generation(String),

    /// A dataset or checkpoint file is malformed. Carries the byte offset at
    /// which decoding failed.
    #[error("format: at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Checkpoint contents do not match the model (missing parameter, shape
    /// mismatch).
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training aborted (non-finite loss or gradient).
    #[error("train: {0}")]
    Train(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable one-word class tag, used by the CLI for machine-parseable
    /// error lines.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Generation(_) => "generation",
            Error::Format { .. } => "format",
            Error::Checkpoint(_) => "checkpoint",
            Error::Train(_) => "train",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is invalid or inconsistent with another.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is malformed (non-unit vectors, NaNs, bad labels, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// The crop overlap is too small to carve a cell grid out of.
    #[error("degenerate overlap: {0}")]
    DegenerateOverlap(String),

    /// Negatives were requested from a queue with no filled entries.
    #[error("feature queue has no filled entries")]
    EmptyNegatives,

    /// Training produced a non-finite loss; the step is aborted.
    #[error("non-finite loss at step {step} (batch index {batch_index}): {detail}")]
    NonFiniteLoss {
        step: u64,
        batch_index: usize,
        detail: String,
    },

    /// A checkpoint could not be decoded.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset ingestion failed outright (an empty dataset is fatal; a
    /// single undecodable file is not).
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 validation, 2 runtime, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Checkpoint(_) | Error::Dataset(_) => 1,
            Error::Contract(_)
            | Error::DegenerateOverlap(_)
            | Error::EmptyNegatives
            | Error::NonFiniteLoss { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

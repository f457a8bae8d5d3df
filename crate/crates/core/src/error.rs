use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto stable exit codes:
/// config errors → 2, data errors → 3, numerical divergence → 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at step {step}: training diverged")]
    Divergence { step: u64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Shape(_) | Error::Checkpoint(_) | Error::Io(_) => 3,
            Error::Divergence { .. } => 4,
        }
    }
}

//! Error taxonomy shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A computation produced (or was handed) a NaN or infinity.
    #[error("non-finite number in {context}")]
    InvalidNumber { context: &'static str },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A client iterate left the representable range mid-training. The
    /// coordinates identify exactly where the run blew up.
    #[error("divergence at round {round}, client {client}, local step {step}")]
    Divergence {
        round: usize,
        client: usize,
        step: usize,
    },

    #[error("operation not supported for model kind {0}")]
    UnsupportedModel(&'static str),

    /// Not enough usable trace points to form an estimate.
    #[error("estimate unavailable: {0}")]
    EstimateUnavailable(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
            _ => 2,
        }
    }
}

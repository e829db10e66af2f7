use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (out-of-region access,
    /// shape mismatch, request outside the largest possible region).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("resampling request maps entirely outside the input image")]
    EmptyRequest,

    #[error("split {index} failed")]
    SplitFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stripe of {budget} bytes cannot hold one {row_bytes}-byte row")]
    BudgetTooSmall { budget: u64, row_bytes: u64 },

    #[error("unsupported split scheme: {0}")]
    UnsupportedScheme(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("short write on {path} at byte offset {offset}")]
    ShortWrite { path: PathBuf, offset: u64 },

    #[error("incomplete write: {0}")]
    IncompleteWrite(String),

    #[error("TIFF format error ({tag}): {message}")]
    Format { tag: String, message: String },

    #[error("statistics undefined: no samples were accumulated")]
    UndefinedStats,

    #[error("{operation} timed out waiting for ranks {missing:?}")]
    Timeout {
        operation: &'static str,
        missing: Vec<usize>,
    },

    /// This rank was fine but others failed during the same update.
    #[error("update aborted because ranks {ranks:?} failed")]
    PeerFailed { ranks: Vec<usize> },

    #[error("handshake failed: {0}")]
    Handshake(String),

    #[error("collective protocol error: {0}")]
    Protocol(String),

    #[error("transport error: {0}")]
    Transport(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(tag: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            tag: tag.into(),
            message: message.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for `op`.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A caller violated an operation's documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// A corpus record failed to parse; `sentence` names the offending record.
    #[error("sentence {sentence}: malformed record: {msg}")]
    Record { sentence: String, msg: String },

    #[error("sentence {sentence}: {msg}")]
    Validation { sentence: String, msg: String },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("checkpoint (format v{version}): {msg}")]
    Checkpoint { version: u32, msg: String },

    #[error("non-finite loss on sentence {sentence} in epoch {epoch}")]
    NonFiniteLoss { sentence: String, epoch: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }
}

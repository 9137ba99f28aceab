use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(crate::topology::Violations),

    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },

    #[error("MDA needs at least 2f+1 = {required} inputs, got {count}")]
    MdaPrecondition { count: usize, required: usize },

    #[error("quorum mismatch: expected {expected} messages, got {got}")]
    QuorumMismatch { expected: usize, got: usize },

    #[error("variance-to-norm ratio undefined: true gradient norm is zero")]
    UndefinedRatio,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown acceptance suite `{0}`")]
    UnknownSuite(String),

    #[error("step {step}, {node}: {source}")]
    Node {
        step: u64,
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_node(self, step: u64, node: impl Into<String>) -> Self {
        Error::Node {
            step,
            node: node.into(),
            source: Box::new(self),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("parse error at {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("schema validation: {0}")]
    Validation(String),

    #[error("input of {needed} tokens does not fit max length {max_len}")]
    Truncation { needed: usize, max_len: usize },

    #[error("value {value:?} for slot {slot} cannot be aligned to the utterances")]
    Unalignable { slot: String, value: String },

    #[error("data error in {example}: {msg}")]
    Data { example: String, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint incompatible with model; missing tensors: {missing:?}; unexpected tensors: {unexpected:?}")]
    Incompatible {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("schema cache is stale: parameters changed since version {cached}, now {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

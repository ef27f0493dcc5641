use std::path::PathBuf;

use cgt_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = CgtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CgtError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("invalid model configuration: {0}")]
    Model(String),

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} out of range for vocab {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("context override has shape {got:?}; expected {expected}")]
    OverrideShape { got: Vec<usize>, expected: String },

    #[error("matrix is not positive definite: pivot {pivot} is {value}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("kernel inverse is {got}x{got}, sequence length is {expected}")]
    KernelSize { got: usize, expected: usize },

    #[error("position {pos} out of range 1..={len}")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("corpus too short for l_max={need}: {}", .files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    CorpusTooShort { need: usize, files: Vec<PathBuf> },

    #[error("dataset: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{what} needs segment metadata, which this dataset does not record")]
    MissingSegments { what: &'static str },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CgtError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CgtError::Io { path: path.into(), source }
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        CgtError::Config { key: key.to_string(), msg: msg.into() }
    }
}

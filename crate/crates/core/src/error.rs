use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty or whitespace-only")]
    EmptyInput,
    #[error("supplied token {token:?} does not occur in the caption at or after byte {offset}")]
    TokenMismatch { token: String, offset: usize },
    #[error("no cross-pair detail unit available for {image_id} in its pool window")]
    CorpusTooSmall { image_id: String },
    #[error("zero-length vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("file is truncated")]
    TruncatedFile,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("non-finite value in vector {0:?}")]
    NonFinite(String),
    #[error("id {0:?} longer than 65535 bytes")]
    IdTooLong(String),
    #[error("no {0} triplets to aggregate")]
    EmptyClass(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch of {0} is too small for the contrastive loss")]
    BatchTooSmall(usize),
    #[error("missing data: {0}")]
    DataMissing(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{0} series has zero variance")]
    ZeroVariance(&'static str),
    #[error("bucket edges must be strictly increasing")]
    BadEdges,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "EmptyInput",
            Error::TokenMismatch { .. } => "TokenMismatch",
            Error::CorpusTooSmall { .. } => "CorpusTooSmall",
            Error::ZeroVector => "ZeroVector",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::BadMagic { .. } => "BadMagic",
            Error::BadVersion(_) => "BadVersion",
            Error::TruncatedFile => "TruncatedFile",
            Error::DuplicateId(_) => "DuplicateId",
            Error::NonFinite(_) => "NonFinite",
            Error::IdTooLong(_) => "IdTooLong",
            Error::EmptyClass(_) => "EmptyClass",
            Error::EmptyBatch => "EmptyBatch",
            Error::BatchTooSmall(_) => "BatchTooSmall",
            Error::DataMissing(_) => "DataMissing",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::TooFewSamples(_) => "TooFewSamples",
            Error::ZeroVariance(_) => "ZeroVariance",
            Error::BadEdges => "BadEdges",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Json { .. } => "Json",
            Error::Io(_) => "Io",
        }
    }
}

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is at or below the zero-norm guard")]
    ZeroNorm { norm: f64 },

    #[error("embedding must have at least 2 coordinates, got {0}")]
    DimensionTooSmall(usize),

    #[error("embedding contains a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("InfoNCE needs at least 3 embeddings (one negative), got {0}")]
    TooFewNegatives(usize),

    #[error("invalid batch view: {0}")]
    InvalidBatch(String),

    #[error("symmetric step requires equal norms, got {norm_i} and {norm_j}")]
    UnequalNorms { norm_i: f64, norm_j: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input")]
    EmptyInput,

    #[error("k-nn needs more than k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch-norm in training mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("latent export needs a 2-dimensional output head, got {0}")]
    WrongOutputDim(usize),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

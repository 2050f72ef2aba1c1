use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown dataset `{0}` (expected cifar10, cifar100 or synthetic)")]
    UnknownDataset(String),

    #[error("failed to load dataset from {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("model has no final affine layer to serve as the classifier head")]
    NoClassifierHead,

    #[error("non-finite value in class attention (class {class_id}, head {head})")]
    NonFiniteAttention { class_id: usize, head: usize },

    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("no positive pair for anchor {anchor} in the contrastive loss")]
    EmptyPositiveSet { anchor: usize },

    #[error(
        "non-finite loss at batch {batch}: L1 = {robustness}, L2 = {accuracy}, scalarized = {scalarized}"
    )]
    NonFiniteLoss {
        batch: usize,
        robustness: f64,
        accuracy: f64,
        scalarized: f64,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("black-box evaluation rejected: surrogate shares parameters with the target")]
    SurrogateIsTarget,

    #[error("usage: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end: 2 for configuration
    /// and usage problems, 3 for everything that fails at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::UnknownDataset(_) | Error::Usage(_) => 2,
            _ => 3,
        }
    }
}

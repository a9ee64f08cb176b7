use std::path::PathBuf;

use thiserror::Error;

use crate::recommender::EmbeddingTable;

/// Last good state of a training run that diverged.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Embeddings(Box<EmbeddingTable>),
    Generator(Vec<f64>),
}

#[derive(Debug, Error)]
pub enum DldaError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fake row {row} has {count} interactions, above the activity cap {cap}")]
    ActivityCapExceeded { row: usize, count: usize, cap: usize },

    #[error("{stage} diverged at epoch {epoch}: {reason}")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        reason: String,
        last_checkpoint: Option<Checkpoint>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<DldaError>,
    },

    #[error("config field `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("schema version {found} does not match expected {expected} in {path}")]
    SchemaMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DldaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DldaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        DldaError::InvalidArgument(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ DldaError::Stage { .. } => already,
            other => DldaError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, DldaError>;

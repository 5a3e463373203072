use std::path::PathBuf;

use thiserror::Error;

use crate::aggregate::AggregateError;
use crate::backend::BackendError;
use crate::context::ContextError;
use crate::controller::ControllerError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate task id `{task_id}` on line {line}")]
    DuplicateTaskId { task_id: String, line: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("missing run data: {0}")]
    MissingRunData(String),
    #[error("replayed playbook does not match {0}")]
    ReplayMismatch(PathBuf),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => 2,
            Error::Io { .. } | Error::Csv(_) => 3,
            Error::Json { .. }
            | Error::Parse { .. }
            | Error::DuplicateTaskId { .. }
            | Error::EmptyCorpus => 4,
            Error::MissingRunData(_) | Error::ReplayMismatch(_) => 5,
            Error::Controller(_) => 6,
            Error::Backend(_) => 7,
            Error::Pipeline(e) if e.is_backend_failure() => 7,
            Error::Pipeline(PipelineError::EmptyCorpus) => 4,
            Error::Pipeline(PipelineError::InvalidStrategy(_)) => 2,
            Error::Context(_) | Error::Aggregate(_) | Error::Pipeline(_) => 8,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

use crate::tasks::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed JSON: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: missing required field `{field}`")]
    MissingField {
        path: String,
        line: usize,
        field: &'static str,
    },

    #[error("record `{doc_id}`: {reason}")]
    InvalidRecord { doc_id: String, reason: String },

    #[error("manifest has {0} group(s); leave-one-out needs at least 2")]
    SingleGroup(usize),

    #[error("declared counts for `{group}` do not match the data: {reason}")]
    CountMismatch { group: String, reason: String },

    #[error("requested {requested} `{split}` records but only {available} exist")]
    InsufficientRecords {
        split: String,
        requested: usize,
        available: usize,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("document `{0}` has no extractive reference and oracle labeling is disabled")]
    NoExtractiveReference(String),

    #[error("concept labeling for `{labeling}` applied to document `{doc}`")]
    LabelingMismatch { labeling: String, doc: String },

    #[error("negative paraphrase sampling needs at least 2 records, got {0}")]
    NegativeSampling(usize),

    #[error("language modeling is not available in text2text mode")]
    LanguageModelingInText2Text,

    #[error("text2text source does not fit task {0}")]
    SourceMismatch(TaskId),

    #[error("task {0} is not enabled in this model")]
    DisabledTask(TaskId),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("decoder state is not initialized")]
    UninitializedState,

    #[error("sweep has no single-task baseline combination")]
    MissingBaseline,

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {loss} for task {task} at epoch {epoch}")]
    NonFiniteLoss { task: TaskId, epoch: usize, loss: f64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for configuration problems, 2 for
    /// data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownPreset(_)
            | Error::MissingBaseline
            | Error::LanguageModelingInText2Text
            | Error::DisabledTask(_) => 1,
            _ => 2,
        }
    }
}

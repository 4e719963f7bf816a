use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("dataset has no documents")]
    EmptyDataset,
    #[error("document {id} has empty text")]
    EmptyText { id: usize },
    #[error("label is empty after normalization")]
    EmptyLabel,
    #[error("duplicate label after normalization: {0:?}")]
    DuplicateLabel(String),
    #[error("document {id} assigned label index {index} but the label set has {len} labels")]
    LabelIndexOutOfRange { id: usize, index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("dataset contains no valid rows")]
    EmptyDataset,
    #[error("dataset has no gold labels")]
    MissingGoldLabels,
    #[error("cannot infer dataset format from {0}; pass a format explicitly")]
    UnknownFormat(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failure to pull labels out of a model response.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResponseParseError {
    #[error("no JSON object found in response")]
    NoJsonFound,
    #[error("key {0:?} missing from response JSON")]
    KeyMissing(String),
    #[error("value at {0:?} is neither a string nor a list of strings")]
    WrongShape(String),
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {name} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("template {name} has unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("authentication rejected: {0}")]
    AuthError(String),
    #[error("prompt exceeds the model context window: {0}")]
    ContextTooLong(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("response cache I/O failure: {0}")]
    Cache(String),
}

impl BackendError {
    /// Errors that the pipeline should not try to recover from.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, BackendError::BadResponse(_))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("generation batch {batch}: {source}")]
    Generation { batch: usize, source: BackendError },
    #[error("merge: {0}")]
    Merge(BackendError),
    #[error("classifying document {id}: {source}")]
    Classification { id: usize, source: BackendError },
    #[error("label pool is empty after aggregation")]
    EmptyLabelPool,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl PipelineError {
    pub fn backend(&self) -> Option<&BackendError> {
        match self {
            PipelineError::Generation { source, .. }
            | PipelineError::Classification { source, .. } => Some(source),
            PipelineError::Merge(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold has {gold} entries but prediction has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("cannot evaluate an empty partition")]
    Empty,
    #[error("dataset is missing gold labels")]
    MissingGoldLabels,
    #[error("assignment covers {assigned} documents but the dataset has {docs}")]
    CoverageMismatch { assigned: usize, docs: usize },
}

/// Errors reading or writing run-directory artifacts.
#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

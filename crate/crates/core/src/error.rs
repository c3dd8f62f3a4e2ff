use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("invalid feature `{feature}`: {reason}")]
    InvalidFeature { feature: String, reason: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("unknown target level `{0}`")]
    UnknownTargetLevel(String),

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("column mismatch: model expects {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("class with {count} members is smaller than k = {k}")]
    ClassTooSmall { count: usize, k: usize },

    #[error("unknown sensitive feature `{0}`")]
    UnknownFeature(String),

    #[error("category `{category}` of `{feature}` has no actual positives")]
    NoPositives { feature: String, category: String },

    #[error("unseen category `{0}`")]
    UnseenCategory(String),

    #[error("repetition {repetition}, fold {fold}: {source}")]
    Fold {
        repetition: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.into(),
        }
    }

    pub(crate) fn feature(feature: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidFeature {
            feature: feature.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { what, expected, got })
    }
}

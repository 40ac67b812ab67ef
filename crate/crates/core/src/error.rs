use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate feature name {0:?}")]
    DuplicateFeature(String),

    #[error("sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },

    #[error("sample {id} references feature {index}, but the model expects d = {expected_d}")]
    DimensionMismatch {
        id: String,
        index: usize,
        expected_d: usize,
    },

    #[error("model is bound to dictionary {model}, dataset uses {dataset}")]
    DictionaryMismatch { model: String, dataset: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("temporal split leaves the {side} side empty (boundary {boundary})")]
    EmptySplitSide { side: &'static str, boundary: i64 },

    #[error("need at least one sample of each class, got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },

    #[error("need at least 2 defined points to fit a slope, got {0}")]
    TooFewPoints(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report serialization failed: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by numerical breakdown rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

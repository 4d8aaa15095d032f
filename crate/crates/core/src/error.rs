use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("invalid header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },

    #[error("unknown action `{0}`")]
    UnknownAction(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate labels: both classes are required")]
    DegenerateLabels,

    #[error("undefined balanced accuracy: labels contain a single class")]
    UndefinedBalancedAccuracy,

    #[error("dimension mismatch: expected {expected} values, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("trust level {0} outside (0, 0.5)")]
    TrustLevel(f64),

    #[error("not enough students: {found} students for {k} folds")]
    TooFewStudents { found: usize, k: usize },

    #[error("outer fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rank-deficient design; dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn row(line: u64, message: impl Into<String>) -> Self {
        Error::Row {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}

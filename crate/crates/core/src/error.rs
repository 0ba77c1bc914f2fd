use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("{0}")]
    InvalidConfig(String),

    #[error("user {user_id}: basket {basket_id} has conflicting order values {first} and {second}")]
    ConflictingOrder {
        user_id: String,
        basket_id: String,
        first: i64,
        second: i64,
    },

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error("user {user_id} has {baskets} basket(s); at least {required} required")]
    TooFewBaskets {
        user_id: String,
        baskets: usize,
        required: usize,
    },

    #[error("empty history")]
    EmptyHistory,

    #[error("empty ground-truth basket")]
    EmptyTruth,

    #[error("vector dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cannot build an index over zero users")]
    EmptyIndex,

    #[error("duplicate user `{0}`")]
    DuplicateUser(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("predictions do not match the corpus: missing [{}], duplicate [{}], unknown [{}]",
        missing.join(", "), duplicate.join(", "), unknown.join(", "))]
    PredictionCoverage {
        missing: Vec<String>,
        duplicate: Vec<String>,
        unknown: Vec<String>,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown fairness axis `{0}`")]
    UnknownAxis(String),
}

impl Error {
    /// True for errors caused by bad input or configuration, as opposed to
    /// environment failures such as I/O.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let row = err.position().map(|p| p.line() as usize).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            kind => Error::MalformedRow {
                row,
                message: format!("{kind:?}"),
            },
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("arity mismatch for `{name}`: expected {expected}, found {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid cover: {0}")]
    InvalidCover(String),

    #[error("ill-formed query: {0}")]
    IllFormed(String),

    #[error("missing statistic `{0}`")]
    MissingStatistic(String),

    #[error("inconsistent statistics: {0}")]
    InconsistentStats(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("expression is not a basic CQ: {0}")]
    NotBasic(String),

    #[error("join graph is disconnected (cross products are not supported)")]
    DisconnectedJoin,

    #[error("division of {numerator} by zero while estimating `{context}`")]
    ZeroDenominator { numerator: u128, context: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid TBox: {0}")]
    InvalidTbox(String),

    #[error("invalid grid point: {0}")]
    InvalidGrid(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

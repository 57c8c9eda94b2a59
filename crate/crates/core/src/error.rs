use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate {kind} id {id:?}")]
    DuplicateEntity { kind: &'static str, id: String },

    #[error("unknown {kind} id {id:?}")]
    UnknownEntity { kind: &'static str, id: String },

    #[error("time went backwards: {from} -> {to}")]
    TimeRegression { from: f64, to: f64 },

    #[error("truncated Gaussian mass underflow on ({lo}, {hi}] with mean {mu}")]
    DegenerateMass { mu: f64, lo: f64, hi: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite estimate for {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

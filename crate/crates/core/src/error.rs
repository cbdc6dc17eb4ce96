use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, empty inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value showed up where a finite one is required.
    #[error("numerical error at index {index}: {message}")]
    Numerical { index: usize, message: String },

    /// Geometry that makes a metric undefined, e.g. a zero-norm centroid under cosine.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A metric that cannot be computed for the given input (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Malformed text input; `row` is 1-based and counts the header line.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// Well-formed input that does not match the expected schema.
    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    /// Invalid run configuration, naming the offending field.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

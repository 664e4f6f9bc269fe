use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown cell id {0}")]
    UnknownCell(usize),
    #[error("cell {0} is not active")]
    InactiveCell(usize),
    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),
    #[error("spaces are not nested: {0}")]
    NonNested(String),
    #[error("trace of degree {trace} cannot represent a field of degree {field}")]
    DegreeMismatch { field: usize, trace: usize },
    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("indefinite operator detected in CG at iteration {iteration}: {what} = {value:e}")]
    Indefinite {
        iteration: usize,
        what: &'static str,
        value: f64,
    },
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

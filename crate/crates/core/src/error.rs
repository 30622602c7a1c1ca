use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid case: field `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("invalid case: {0}")]
    Invariant(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("iteration limit reached: {0}")]
    IterationLimit(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("degenerate cut: {0}")]
    DegenerateCut(String),
    #[error("inconsistent duals: {0}")]
    InconsistentDuals(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema { field: field.into(), reason: reason.into() }
    }
}

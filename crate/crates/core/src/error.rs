use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported space: {0}")]
    UnsupportedSpace(String),
    #[error("unsupported series: {0}")]
    UnsupportedSeries(String),
    #[error("empty series: {0}")]
    EmptySeries(String),
    #[error("weight is not radial: {0}")]
    NotRadial(String),
    #[error("degenerate gram matrix: {0}")]
    DegenerateGram(String),
    #[error("point lies in the base locus")]
    BaseLocus,
    #[error("discretization failure: {0}")]
    DiscretizationFailure(String),
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("schema error: {0}")]
    Schema(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] liquidation_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

impl LabError {
    pub fn io(context: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { context: context.into(), source }
    }

    /// Short machine-readable code for the error JSON.
    pub fn kind(&self) -> &'static str {
        use liquidation_core::Error as E;
        match self {
            LabError::Schema(_) => "SchemaError",
            LabError::Model(e) => match e {
                E::NegativeOffDiagonal { .. } => "NegativeOffDiagonal",
                E::RowSumNonzero { .. } => "RowSumNonzero",
                E::DimensionMismatch(_) => "DimensionMismatch",
                E::AssumptionViolated(_) => "AssumptionViolated",
                E::OutOfHorizon { .. } => "OutOfHorizon",
                E::OutOfGrid { .. } => "OutOfGrid",
                E::DomainError(_) => "DomainError",
                E::InvalidArgument(_) => "InvalidArgument",
                E::ToleranceFailure { .. } => "ToleranceFailure",
                E::MonotonicityViolation { .. } => "MonotonicityViolation",
                E::FitDiverged { .. } => "FitDiverged",
            },
            LabError::Io { .. } => "IoError",
            LabError::ThreadPool(_) => "ThreadPoolError",
            LabError::Parameter(_) => "InvalidParameter",
        }
    }
}

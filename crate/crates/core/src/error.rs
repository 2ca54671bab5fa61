use thiserror::Error;

use crate::conic::SolveStatus;
use crate::equilibrium::EquilibriumTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate policy: {0}")]
    DegeneratePolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed conic program: {0}")]
    Construction(String),

    #[error("conic solver finished with status {status:?}: {detail}")]
    Solver { status: SolveStatus, detail: String },

    #[error("infeasible policy: {0}")]
    Infeasible(String),

    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("best-response dynamics failed at iteration {iteration}: {source}")]
    Dynamics {
        iteration: usize,
        #[source]
        source: Box<Error>,
        trace: Box<EquilibriumTrace>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InsufficientData(_) => "insufficient_data",
            Error::DegeneratePolicy(_) => "degenerate_policy",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Construction(_) => "construction",
            Error::Solver { .. } => "solver",
            Error::Infeasible(_) => "infeasible",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::Parse { .. } => "parse",
            Error::Dynamics { .. } => "dynamics",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn dim(expected: usize, found: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            context: context.into(),
        }
    }
}

use thiserror::Error;

/// Every failure the analysis routines can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed qsf-1 input: {0}")]
    Format(String),

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{what} is singular (smallest eigenvalue or singular value {value:.3e})")]
    Singular { what: String, value: f64 },

    #[error("invalid tolerance policy: {0}")]
    Tolerance(String),

    #[error("Schmidt rank {found} where {expected} is required")]
    SchmidtRank { expected: usize, found: usize },

    #[error("state is PPT but the operation requires an NPT state")]
    NotNpt,

    #[error("state is NPT but the operation requires a PPT state")]
    NotPpt,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("generator gave up after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },
}

impl Error {
    /// True for errors caused by the input file rather than by the analysis.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Json(_)
                | Error::Io(_)
                | Error::Dimension(_)
                | Error::NonFinite { .. }
                | Error::NotHermitian { .. }
                | Error::NotPsd { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

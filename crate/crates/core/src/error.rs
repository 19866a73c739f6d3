use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular covariance block at grid index {index}: {reason}")]
    Singular { index: usize, reason: String },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("solver did not converge after {iterations} iterations (best objective {objective})")]
    NoConvergence {
        iterations: usize,
        objective: f64,
        best: Vec<f64>,
    },

    #[error("no finite-difference stencil for parameter coordinate {0}")]
    NoStencil(usize),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::Factorization(_)
                | Error::NoConvergence { .. }
                | Error::NonFinite(_)
        )
    }
}

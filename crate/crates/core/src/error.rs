use thiserror::Error;

/// Errors produced anywhere in the eigenvalue pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A pivot of the LDLT factorization was not strictly positive. With exact
    /// positive-definite input this only happens when the fractional-bit budget
    /// is too small for the matrix order.
    #[error("pivot {index} is not positive at {frac_bits} fractional bits; precision exhausted, increase K")]
    NonPositivePivot { index: usize, frac_bits: u32 },

    #[error("division by zero in fixed-point arithmetic")]
    DivisionByZero,

    /// The truncated inverse produced a non-positive eigenvalue.
    #[error("truncated inverse has non-positive eigenvalue {value:e}; increase K or the block size")]
    NonPositiveBlockEigenvalue { value: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("automatic precision search did not converge below {max_bits} bits")]
    PrecisionNotConverged { max_bits: u32 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate regression design: {0}")]
    DegenerateFit(String),

    #[error("worker {0} aborted")]
    WorkerAborted(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that more fractional bits would fix.
    pub fn is_precision_exhausted(&self) -> bool {
        matches!(
            self,
            Error::NonPositivePivot { .. }
                | Error::DivisionByZero
                | Error::NonPositiveBlockEigenvalue { .. }
                | Error::PrecisionNotConverged { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

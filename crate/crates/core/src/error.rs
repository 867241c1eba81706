use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV cell or record could not be interpreted. `row` is the 1-based line number.
    #[error("{message}, row {row}")]
    Parse { row: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Zero (or non-positive) estimated mass for a disease class.
    #[error("class {class} has no estimated mass (denominator {denominator})")]
    EmptyClass { class: usize, denominator: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(
        "estimated verification probability below {floor} for verified units {units:?}; \
         pass --clamp-propensity to clamp"
    )]
    Positivity { floor: f64, units: Vec<usize> },

    #[error("negative plug-in variance: {0}; consider bootstrap variance instead")]
    NegativeVariance(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{failures} of {total} replicates failed")]
    TooManyFailures { failures: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that arise from the numerics rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EmptyClass { .. }
                | Error::NotPositiveDefinite(_)
                | Error::Positivity { .. }
                | Error::NegativeVariance(_)
                | Error::Numerical(_)
                | Error::TooManyFailures { .. }
        )
    }
}

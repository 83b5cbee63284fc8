use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes and C status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("treatment value {value} at t={t} is not 0 or 1")]
    NonBinaryTreatment { t: usize, value: f64 },

    #[error("variance {value:e} at t={t} is below the floor {floor:e}")]
    VarianceBelowFloor { t: usize, value: f64, floor: f64 },

    #[error("lag count K={lags} is invalid for a series of length T={len}")]
    InvalidLagCount { lags: usize, len: usize },

    #[error("invalid regression specification: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "design matrix is rank deficient: column {column} has relative singular value {ratio:e} (cutoff 1e-10)"
    )]
    SingularDesign { column: usize, ratio: f64 },

    #[error("weight {value} at index {index} is not positive")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("bandwidth L={bandwidth} must be smaller than the number of rows T-K={rows}")]
    BandwidthTooLarge { bandwidth: usize, rows: usize },

    #[error(
        "covariance block for lags {lags:?} is singular (relative singular value {ratio:e}); test a smaller subset of lags"
    )]
    SingularCovariance { lags: Vec<usize>, ratio: f64 },

    #[error("enumeration cap exceeded: {what} needs 2^{bits} terms, cap is 2^{cap}")]
    EnumerationCap {
        what: &'static str,
        bits: usize,
        cap: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("randomization test: {singular} of {draws} resamples had singular fits (limit is under 1%)")]
    TooManySingularResamples { singular: usize, draws: usize },

    #[error("dataset row {row}: {message}")]
    Dataset { row: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::SingularDesign { .. }
            | Error::SingularCovariance { .. }
            | Error::TooManySingularResamples { .. } => ErrorKind::Numerical,
            Error::InvalidArgument(_) | Error::Config(_) | Error::Unsupported(_) => {
                ErrorKind::Usage
            }
            Error::InvalidSpec(_) | Error::InvalidLagCount { .. } | Error::BandwidthTooLarge { .. } => {
                ErrorKind::Usage
            }
            _ => ErrorKind::Data,
        }
    }
}

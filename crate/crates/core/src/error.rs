use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal is undefined: {0}")]
    UndefinedSignal(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("squeezing target {target_db:.3} dB is unreachable (minimum achievable {achievable_db:.3} dB)")]
    CalibrationUnreachable { target_db: f64, achievable_db: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("parameters outside the one-mode validity window: {0}")]
    OutOfWindow(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

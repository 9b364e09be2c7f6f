use thiserror::Error;

/// Errors raised by the calibration, interval and generator routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("insufficient data: requested {requested} points, {available} available")]
    InsufficientData { requested: usize, available: usize },

    #[error("window too short: t = {t} < k = {k}")]
    WindowTooShort { t: usize, k: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no scores to take a quantile of")]
    EmptyScores,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("all weights are zero")]
    AllZeroWeights,

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("invalid level {0}")]
    InvalidLevel(f64),

    #[error("mixing coefficients must be non-negative and non-increasing")]
    InvalidMixingCoefficients,

    #[error("multi-stage decomposition needs at least two stages, got {0}")]
    TooFewStages(usize),

    #[error("invalid scenario spec: {0}")]
    InvalidSpec(&'static str),

    #[error("no precomputed prediction for time index {0}")]
    UnknownTime(i64),

    #[error("non-finite value in input")]
    NonFinite,
}

pub type Result<T> = core::result::Result<T, Error>;

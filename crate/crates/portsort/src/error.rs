//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by panel construction, portfolio formation, estimation,
/// inference, tuning, and simulation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("empty input: need at least one observation")]
    EmptyInput,

    #[error("portfolio count J must be at least 1")]
    InvalidPortfolioCount,

    #[error("J={j} exceeds the cross-sectional sample size n={n}")]
    JTooLarge { j: usize, n: usize },

    #[error("dimension mismatch for {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("zero cross-sectional standard deviation in period {period}, column {column}")]
    ZeroVariance { period: i64, column: usize },

    #[error("non-positive value in period {period}, row {row}: log transform requires strictly positive input")]
    NonPositiveValue { period: i64, row: usize },

    #[error("evaluation point {point:?} falls in an empty portfolio in period(s) {periods:?}")]
    EmptyCellAt { point: Vec<f64>, periods: Vec<i64> },

    #[error("period fit failed (singular control design) in period(s) {periods:?}")]
    PeriodFitFailed { periods: Vec<i64> },

    #[error("need at least {required} periods, got {actual}")]
    InsufficientPeriods { required: usize, actual: usize },

    #[error("operation requires control columns but the panel has none")]
    NoControls,

    #[error("weighting by column requested but period {period} carries no weights")]
    MissingWeights { period: i64 },

    #[error("candidate grid is empty")]
    EmptyGrid,

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("replication failure rate {failed}/{total} exceeds 1%: {sample}")]
    FailureRateExceeded {
        failed: usize,
        total: usize,
        sample: String,
    },

    #[error("panel construction: {0}")]
    PanelConstruction(String),
}

pub type Result<T> = std::result::Result<T, Error>;

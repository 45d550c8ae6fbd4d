use thiserror::Error;

/// Errors raised by the identification pipeline.
#[derive(Debug, Error)]
pub enum JmlsError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix not positive definite after jitter escalation ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("all particle weights vanished at t={t}")]
    WeightCollapse { t: usize },

    #[error("non-finite value in {context} at t={t}")]
    NonFinite { context: &'static str, t: usize },

    #[error("problem too large for {context}: {size} > {limit}")]
    TooLarge {
        context: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("mode {mode} starved for {iterations} consecutive iterations (last at k={k})")]
    PersistentStarvation {
        mode: usize,
        iterations: usize,
        k: usize,
    },

    #[error("missing smoothed statistics for particle {0}")]
    MissingSmoothed(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl JmlsError {
    /// True for failures that stem from numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            JmlsError::NotPositiveDefinite { .. }
                | JmlsError::WeightCollapse { .. }
                | JmlsError::NonFinite { .. }
                | JmlsError::PersistentStarvation { .. }
        )
    }
}

impl From<serde_json::Error> for JmlsError {
    fn from(e: serde_json::Error) -> Self {
        JmlsError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, JmlsError>;

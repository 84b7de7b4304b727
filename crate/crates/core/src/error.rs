use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the HOHSMM pipeline.
#[derive(Debug, Error)]
pub enum HohsmmError {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("state index {index} out of range for {num_states} states")]
    StateIndex { index: usize, num_states: usize },

    #[error("history has length {got}, expected {expected}")]
    HistoryLength { got: usize, expected: usize },

    #[error("degenerate transition row: excluded state {state} carries mass {mass}")]
    DegenerateRow { state: usize, mass: f64 },

    #[error("duration must be at least 1, got {0}")]
    DurationDomain(u64),

    #[error("degenerate jump support: 5th and 95th percentiles coincide at {0}")]
    DegenerateSupport(f64),

    #[error("need at least {needed} distinct segment centers, found {found}")]
    UnderPopulated { needed: usize, found: usize },

    #[error("trajectory {unit} has length {length}, need at least {needed}")]
    TrajectoryTooShort {
        unit: String,
        length: usize,
        needed: usize,
    },

    #[error("lag-1 allocation mismatch in sequence {sequence} at segment {segment}")]
    AllocationConsistency { sequence: usize, segment: usize },

    #[error("full conditional has zero normalizer: {0}")]
    NumericalUnderflow(String),

    #[error("non-finite likelihood: {0}")]
    NonFinite(String),

    #[error("state {0} is never visited in the final segmentation")]
    MissingState(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("sequence {sequence} has {segments} segments, fewer than the window f = {window}")]
    FailureWindow {
        sequence: usize,
        segments: usize,
        window: usize,
    },

    #[error("all {0} simulated paths were censored before reaching the failure state")]
    AllPathsCensored(usize),

    #[error("model has no {0}")]
    MissingModelField(&'static str),

    #[error("degenerate PCA input: {0}")]
    DegeneratePca(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HohsmmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HohsmmError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HohsmmError::DegenerateRow { .. }
                | HohsmmError::NumericalUnderflow(_)
                | HohsmmError::NonFinite(_)
                | HohsmmError::AllPathsCensored(_)
                | HohsmmError::DegeneratePca(_)
                | HohsmmError::DegenerateSupport(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HohsmmError>;

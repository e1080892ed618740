use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, StuaError>;

#[derive(Debug, Error)]
pub enum StuaError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate geometry: regions {0} and {1} share coordinates")]
    DegenerateGeometry(usize, usize),

    #[error("degenerate degree: row {row} of the self-looped adjacency sums to {degree}")]
    DegenerateDegree { row: usize, degree: f64 },

    #[error("empty period: no adjacency matrices to average")]
    EmptyPeriod,

    #[error(
        "insufficient history: target index {target} needs at least {needed} intervals before it"
    )]
    InsufficientHistory { target: usize, needed: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("duplicate cell at {timestamp} for region `{region}`")]
    DuplicateCell { timestamp: String, region: String },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("non-monotonic timestamps: {0}")]
    NonMonotonicTimestamps(String),

    #[error("malformed input {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StuaError {
    /// Process exit code for this error class. Each class gets its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            StuaError::InvalidConfig(_) => 2,
            StuaError::DegenerateGeometry(..) | StuaError::DegenerateDegree { .. } => 3,
            StuaError::EmptyPeriod | StuaError::InsufficientHistory { .. } => 4,
            StuaError::DimensionMismatch { .. } => 5,
            StuaError::UnknownRegion(_)
            | StuaError::DuplicateCell { .. }
            | StuaError::MissingData(_)
            | StuaError::NonMonotonicTimestamps(_)
            | StuaError::Parse { .. } => 6,
            StuaError::UndefinedMetric(_) => 7,
            StuaError::NonFiniteLoss { .. } => 8,
            StuaError::Checkpoint(_) => 9,
            StuaError::Io { .. } => 10,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StuaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        StuaError::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

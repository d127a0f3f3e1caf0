use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("insufficient resolution: {shells} dyadic shell(s) fit on the grid, need at least 3")]
    InsufficientResolution { shells: usize },

    #[error("dyadic index {j} outside resolvable range [{j_min}, {j_max}]")]
    ShellOutOfRange { j: i32, j_min: i32, j_max: i32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("time grid or spatial grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("oscillation unresolvable: frequency {frequency} exceeds dealiased band limit {limit}")]
    OscillationUnresolvable { frequency: i64, limit: i64 },

    #[error("noise model failed its growth-condition audit: {0}")]
    UnauditedNoise(String),

    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}

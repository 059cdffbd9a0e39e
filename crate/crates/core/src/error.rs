use std::path::PathBuf;

use thiserror::Error;

use crate::pipeline::OptimizerTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed velodyne scan: {0}")]
    MalformedScan(String),

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("calibration parse error: {0}")]
    CalibrationParse(String),

    #[error("invalid calibration: {0}")]
    Calibration(String),

    #[error("scene parse error: {0}")]
    SceneParse(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ground truth has no valid pixels")]
    EmptyGroundTruth,

    #[error("numerical failure: {message}")]
    NumericalFailure {
        message: String,
        trace: Box<OptimizerTrace>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalFailure { .. })
    }
}

use std::path::PathBuf;

/// Errors produced anywhere in the calibration toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not enough data: need at least {needed}, got {got} ({what})")]
    NotEnoughData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("ray is parallel to the plane")]
    ParallelRay,

    #[error("non-finite residuals at the initial parameters")]
    NonFiniteResidual,

    #[error("solver did not converge after {iterations} iterations (cost {cost:e})")]
    NoConvergence { iterations: usize, cost: f64 },

    #[error("out of bounds: pixel ({u}, {v}) outside {width}x{height}")]
    OutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

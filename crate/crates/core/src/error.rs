use std::path::PathBuf;

/// Errors raised by the background subtraction, detection and tracking stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid point at index {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("at least {needed} frames are required, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("no eigenvalue within tolerance of 1; no static mode")]
    NoStaticMode,
    #[error("empty sample set")]
    EmptySamples,
    #[error("histogram has no counts")]
    EmptyHistogram,
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("model does not match sensor: {0}")]
    ModelMismatch(String),
    #[error("frame {got} is not after frame {last}")]
    FrameOrder { last: u64, got: u64 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of the numerical kernels, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure(_) | Error::DegenerateMatrix(_) | Error::NoStaticMode
        )
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pose estimation failed: {0}")]
    PoseFailure(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("grid resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(usize, usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration, as opposed
    /// to runtime failures.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Config(_)
                | Error::Format(_)
                | Error::EmptyDataset(_)
                | Error::ResolutionMismatch(..)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

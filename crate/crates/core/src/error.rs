use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Numeric(String),

    /// Circulant embedding stayed indefinite after all allowed doublings.
    #[error("negative spectrum: most negative weight {min_weight:e} at embedding {dims:?}")]
    NegativeSpectrum { min_weight: f64, dims: (usize, usize) },

    /// Cholesky breakdown, reported with the failing pivot.
    #[error("factorization failed at pivot {pivot} (size {size})")]
    Factorization { pivot: usize, size: usize },

    #[error("observation {index} at ({x}, {y}) is closer than {margin} nodes to the grid boundary")]
    Margin {
        index: usize,
        x: f64,
        y: f64,
        margin: usize,
    },

    #[error("dense problem of size {size} exceeds the cap of {cap}")]
    DenseCap { size: usize, cap: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable code used by the command line's `ERROR <code>: <message>` lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Numeric(_) => "numeric",
            Error::NegativeSpectrum { .. } => "negative_spectrum",
            Error::Factorization { .. } => "factorization",
            Error::Margin { .. } => "margin",
            Error::DenseCap { .. } => "dense_cap",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

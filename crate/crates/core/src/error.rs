use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("could not reach building density {target:.3} after {attempts} attempts (best {best:.3})")]
    DensityUnsatisfiable { target: f64, attempts: usize, best: f64 },

    #[error("no eligible transmitter site: {0}")]
    NoEligibleSite(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed { path: path.into(), reason: reason.into() }
    }

    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::DensityUnsatisfiable { .. } => "density_unsatisfiable",
            Error::NoEligibleSite(_) => "no_eligible_site",
            Error::OutOfRange(_) => "out_of_range",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::Malformed { .. } => "malformed_file",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

use std::path::PathBuf;

use scd_autograd::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pixel ({y}, {x}) has color {rgb:?} which is not in the palette")]
    UnknownColor { y: usize, x: usize, rgb: [u8; 3] },
    #[error("class index {index} out of range for a palette of {palette_len} entries")]
    IndexOutOfRange { index: usize, palette_len: usize },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("zero vector in cosine similarity at pixel {0}")]
    ZeroVector(usize),
    #[error("palette: {0}")]
    Palette(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("png {path}: {message}")]
    Png { path: PathBuf, message: String },
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
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Whether the error stems from user input (exit code 1) rather than a
    /// failure while running (exit code 2).
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::MissingFile(_)
                | Error::InvalidConfig(_)
                | Error::Config { .. }
                | Error::ConfigMismatch(_)
                | Error::Palette(_)
                | Error::UnknownColor { .. }
                | Error::DimensionMismatch(_)
                | Error::EmptyDataset
                | Error::Checkpoint { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed PLY at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("missing PLY property `{0}`")]
    Schema(String),

    #[error("invalid value at vertex {index}: {message}")]
    Validation { index: usize, message: String },

    #[error("checkpoint catalog: {0}")]
    Catalog(String),

    #[error("checkpoint manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported camera model `{0}` (expected SIMPLE_PINHOLE or PINHOLE)")]
    UnsupportedModel(String),

    #[error("image format: {0}")]
    ImageFormat(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("profiling: {0}")]
    Profiling(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("transfer: {0}")]
    Transfer(String),

    #[error("composition: {0}")]
    Composition(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad input or configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } | Error::Csv(_) => 1,
            _ => 2,
        }
    }
}

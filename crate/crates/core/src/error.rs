use std::path::PathBuf;

/// Errors produced anywhere in the crater pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed raster header at byte {offset}: {reason}")]
    RasterHeader { offset: usize, reason: String },
    #[error("raster payload at byte {offset}: expected {expected} bytes, found {found}")]
    RasterPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("catalog row {row}: {reason}")]
    CatalogRow { row: usize, reason: String },
    #[error("json document {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VcaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("format error in {path} at offset {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("linear algebra backend failure: {0}")]
    Backend(String),

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("fit failed for transform {index}: {source}")]
    TransformFit {
        index: usize,
        #[source]
        source: Box<VcaError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl VcaError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        VcaError::InvalidInput(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        VcaError::DimensionMismatch(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        VcaError::Io {
            path: path.into(),
            source,
        }
    }
}

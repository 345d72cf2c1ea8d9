use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("dimension overflow: {0}")]
    DimOverflow(String),

    #[error("unsupported dtype tag {0}")]
    Dtype(u8),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

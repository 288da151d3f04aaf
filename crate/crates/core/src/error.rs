use std::path::PathBuf;

/// Errors produced by the attribution library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file. `location` names the line or byte offset.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Data that parsed but violates a domain invariant (e.g. a NaN coordinate).
    #[error("validation error: {0}")]
    Validation(String),

    /// Bad argument to an operation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Inconsistent configuration (config files, batch composition, splits).
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint or container file could not be decoded.
    #[error("load error: {0}")]
    Load(String),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;
use vesseldistill_autograd::EngineError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    /// A latent vector with zero norm; similarity is undefined there.
    #[error("degenerate input at tap {tap}: {what}")]
    Degenerate { tap: usize, what: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

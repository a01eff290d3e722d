use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("feature extraction failed: {0}")]
    Feature(String),

    #[error("unknown index `{0}`")]
    UnknownIndex(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("class balancing failed: {0}")]
    Balancing(String),

    #[error("leakage audit failed: {0}")]
    Leakage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

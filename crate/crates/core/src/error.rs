//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported WAV format in {path:?}: {detail}")]
    WavFormat { path: PathBuf, detail: String },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("signal too short: {detail}")]
    Length { detail: String },
    #[error("band scheme error: {0}")]
    Scheme(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("external adapter error: {0}")]
    Adapter(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }
}

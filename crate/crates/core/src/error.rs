use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(
        "pqmf design infeasible: requested {requested_db:.1} dB stopband, achieved {achieved_db:.1} dB \
         (reconstruction snr {snr_db:.1} dB)"
    )]
    PqmfDesign {
        requested_db: f64,
        achieved_db: f64,
        snr_db: f64,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("external command `{command}` failed: {detail}")]
    External { command: String, detail: String },

    #[error("wav error in {path:?}: {source}")]
    Wav {
        path: Option<PathBuf>,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

impl From<hound::Error> for Error {
    fn from(source: hound::Error) -> Self {
        Error::Wav { path: None, source }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::array::ArrayError;
use crate::detect::DetectError;
use crate::device::DeviceError;
use crate::kv::KvError;
use crate::playback::PlaybackError;
use crate::signal::SignalError;

/// Crate-level error wrapping every module error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Playback(#[from] PlaybackError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{path}: {source}")]
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

pub type Result<T> = std::result::Result<T, Error>;

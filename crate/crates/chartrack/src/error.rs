use std::path::PathBuf;

use chartrack_core::autoencoder::AeError;
use chartrack_core::channel::ChannelError;
use chartrack_core::linalg::LinalgError;
use chartrack_core::metrics::MetricError;
use chartrack_core::nn::NnError;
use chartrack_core::signaling::SignalingError;
use chartrack_core::tracker::TrackerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Numerical { stage: &'static str, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data or format, 3 numerical or training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Format { .. } | Error::Config(_) => 2,
            Error::Numerical { .. } => 3,
        }
    }
}

/// Tags a core error with the pipeline stage it came from.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Error>;
}

macro_rules! numerical {
    ($($t:ty),*) => {$(
        impl<T> Stage<T> for Result<T, $t> {
            fn stage(self, stage: &'static str) -> Result<T, Error> {
                self.map_err(|e| Error::Numerical { stage, message: e.to_string() })
            }
        }
    )*};
}

numerical!(AeError, ChannelError, LinalgError, MetricError, NnError, SignalingError, TrackerError);

pub type Result<T, E = Error> = std::result::Result<T, E>;

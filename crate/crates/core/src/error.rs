use std::path::PathBuf;

use thiserror::Error;

use crate::session::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {context}: {message}")]
    Malformed { context: String, message: String },

    #[error("spike outside trial bounds: trial {trial_id}, channel {channel}, time {time}")]
    SpikeOutOfBounds { trial_id: u32, channel: usize, time: f64 },

    #[error("unsorted spikes: trial {trial_id}, channel {channel}")]
    UnsortedSpikes { trial_id: u32, channel: usize },

    #[error("unknown phase name `{0}`")]
    UnknownPhase(String),

    #[error("session failed validation ({} violation(s)); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidSession(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Malformed {
            context: context.into(),
            message: message.into(),
        }
    }
}

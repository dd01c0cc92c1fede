use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model invariant was violated. `path` points at the offending entry.
    #[error("invalid input at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("stage {stage} has no visible satellite/grid pair with allocatable time")]
    DegenerateStage { stage: usize },

    /// An enumeration or search would exceed its configured bound.
    #[error("{what}: {} exceeds the limit of {cap}; {advice}", show_count(*count))]
    CapacityExceeded { what: &'static str, count: u128, cap: u128, advice: &'static str },

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
}

fn show_count(count: u128) -> String {
    match count {
        u128::MAX => "more than 2^128".to_string(),
        n => n.to_string(),
    }
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for this error: 1 validation, 2 limits, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::DegenerateStage { .. } | Error::Parse { .. } => 1,
            Error::CapacityExceeded { .. } => 2,
            Error::Io { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

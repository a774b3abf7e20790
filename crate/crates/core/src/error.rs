use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of range or has the wrong shape.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A time value lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was applied to data in the wrong state (e.g. an unpaired
    /// guidance output).
    #[error("state error: {0}")]
    State(String),

    /// The compiled engine refused a batch it cannot execute.
    #[error("engine rejected batch: {0}")]
    EngineRejected(String),

    /// Something that the surrounding invariants rule out actually happened.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation failed for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

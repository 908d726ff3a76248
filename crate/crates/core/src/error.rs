use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Index(String),

    #[error("{0}")]
    State(String),

    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    Training {
        what: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("non-finite intermediate at sampling step {step}")]
    Sampling { step: usize },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, used as the prefix of CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Index(_) => "index",
            Error::State(_) => "state",
            Error::Training { .. } => "training",
            Error::Sampling { .. } => "sampling",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

//! Experiment running: config parsing, archive layout and persistence,
//! seed orchestration with resume, and report/curve/verify emission.

pub mod config;
pub mod persist;
pub mod report;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Persist(#[from] persist::PersistError),
    #[error(transparent)]
    Ticket(#[from] crate::tickets::TicketError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("archive incomplete: {0:?}")]
    Incomplete(Vec<String>),
    #[error("{0}")]
    Archive(String),
}

impl ExpError {
    pub fn io(path: impl Into<String>) -> impl FnOnce(std::io::Error) -> ExpError {
        let path = path.into();
        move |source| ExpError::Io { path, source }
    }

    /// Process exit code: 2 config, 3 incomplete archive, 1 the rest.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Config(_) => 2,
            ExpError::Incomplete(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExpError>;

//! The server: owns the cluster state and session registry, speaks the wire
//! protocol, runs the scheduling tick and keeps the write-ahead journal.

mod config;
pub mod journal;
pub mod protocol;
mod server;

pub use config::{ConfigError, DaemonConfig, NodeConfig, DEFAULT_TICK_MS, TOKEN_ENV};
pub use journal::{recover, JournalEntry, JournalError, JournalEvent, Recovered};
pub use protocol::{AttachInfo, Code, Frame, Request, Response};
pub use server::{serve, Daemon};

#[derive(Debug, thiserror::Error)]
pub enum DaemonError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    BindFailed {
        addr: String,
        source: std::io::Error,
    },
    #[error("journal corrupt at seq {seq}: {reason}; refusing to start")]
    JournalCorrupt { seq: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<JournalError> for DaemonError {
    fn from(e: JournalError) -> Self {
        match e {
            JournalError::Io(e) => DaemonError::Io(e),
            JournalError::Corrupt { seq, reason } => DaemonError::JournalCorrupt { seq, reason },
        }
    }
}

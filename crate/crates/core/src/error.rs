use std::io;

use crate::resp::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("3n+1 overflows 64 bits at n = {0}")]
    Overflow(u64),

    #[error("variable name must not be empty")]
    EmptyVarname,

    #[error("subscript of {0} bytes exceeds the 1 MiB limit")]
    SubscriptTooLarge(usize),

    #[error("value of {0} bytes exceeds the 1 MiB limit")]
    ValueTooLarge(usize),

    #[error("value at {node} is not an integer")]
    NotAnInteger { node: String },

    #[error("increment at {node} overflows a signed 64-bit integer")]
    IncrementOverflow { node: String },

    #[error("transaction gave up after {0} attempts")]
    RetryLimit(u32),

    #[error("lock {requested} conflicts with lock {held} already held by the same owner")]
    SelfConflict { requested: String, held: String },

    #[error("lock {0} is not held by this owner")]
    NotHeld(String),

    #[error("{0} is not supported by this backend")]
    Unsupported(&'static str),

    #[error("{0}")]
    InvalidState(&'static str),

    #[error("server replied with error: {0}")]
    Server(String),

    #[error("unexpected reply to {command}: {reply}")]
    UnexpectedReply { command: String, reply: String },

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("benchmark keys already exist in the store ({0}); rerun with --force-flush")]
    NamespaceInUse(String),

    #[error("worker {worker} failed: {message}")]
    WorkerFailed { worker: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for failures reaching the backend rather than misuse or bad data.
    pub fn is_connection(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Protocol(_))
    }
}

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedded::{EmbeddedStore, DEFAULT_RETRY_LIMIT, DEFAULT_SHARDS};
use crate::error::{Error, Result};
use crate::resp::{RespStore, DEFAULT_ADDR};
use crate::store::Store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Embedded,
    Resp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordination {
    /// Start barrier and completion wait on hierarchical locks.
    Locks,
    /// Start barrier and completion wait by polling flag nodes.
    Polling,
}

/// What a worker does with each claimed start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Workload {
    #[default]
    Collatz,
    /// Claims blocks but computes nothing; isolates coordination traffic.
    Noop,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}' (expected one of: {})"),
                        s,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(Backend { Embedded => "embedded", Resp => "resp" });
text_enum!(Coordination { Locks => "locks", Polling => "polling" });

impl Backend {
    /// Locks where the backend has them, polling otherwise.
    pub fn default_coordination(self) -> Coordination {
        match self {
            Backend::Embedded => Coordination::Locks,
            Backend::Resp => Coordination::Polling,
        }
    }
}

pub const DEFAULT_LIMIT: u64 = 100_000;
pub const DEFAULT_BLOCK_SIZE: u64 = 1_000;
pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(100);

/// Twice the detected CPU count.
pub fn default_workers() -> usize {
    2 * std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub backend: Backend,
    /// Server address; used by the RESP backend only.
    pub addr: String,
    pub workers: usize,
    pub limit: u64,
    pub block_size: u64,
    pub coordination: Coordination,
    pub poll_interval: Duration,
    pub retry_limit: u32,
    /// Clear leftover benchmark keys instead of refusing to run.
    pub force_flush: bool,
    pub workload: Workload,
}

impl BenchConfig {
    pub fn new(backend: Backend) -> Self {
        BenchConfig {
            backend,
            addr: DEFAULT_ADDR.to_string(),
            workers: default_workers(),
            limit: DEFAULT_LIMIT,
            block_size: DEFAULT_BLOCK_SIZE,
            coordination: backend.default_coordination(),
            poll_interval: DEFAULT_POLL_INTERVAL,
            retry_limit: DEFAULT_RETRY_LIMIT,
            force_flush: false,
            workload: Workload::Collatz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coordination == Coordination::Locks && self.backend != Backend::Embedded {
            return Err(Error::Config("lock coordination requires the embedded backend".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.limit == 0 {
            return Err(Error::Config("limit must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        if self.retry_limit == 0 {
            return Err(Error::Config("retry limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where a run's data lives. Each worker opens its own store from it.
#[derive(Clone)]
pub enum Target {
    Embedded(EmbeddedStore),
    Resp { addr: String, retry_limit: u32 },
}

impl Target {
    /// A fresh in-process store, or the configured server.
    pub fn for_config(config: &BenchConfig) -> Self {
        match config.backend {
            Backend::Embedded => Target::Embedded(EmbeddedStore::with_options(DEFAULT_SHARDS, config.retry_limit)),
            Backend::Resp => Target::Resp { addr: config.addr.clone(), retry_limit: config.retry_limit },
        }
    }

    pub fn backend(&self) -> Backend {
        match self {
            Target::Embedded(_) => Backend::Embedded,
            Target::Resp { .. } => Backend::Resp,
        }
    }

    pub fn open(&self) -> Result<Box<dyn Store + Send>> {
        Ok(match self {
            Target::Embedded(db) => Box::new(db.session()),
            Target::Resp { addr, retry_limit } => {
                Box::new(RespStore::connect(addr.as_str())?.with_retry_limit(*retry_limit))
            }
        })
    }
}

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::Result;
use crate::store::{NodeHandle, Store, Subscript};

#[derive(Debug, Default)]
struct Cells {
    reads: AtomicU64,
    updates: AtomicU64,
}

/// Per-worker read/update counters. Clones share the same counts.
#[derive(Debug, Clone, Default)]
pub struct AccessCounters(Arc<Cells>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    pub reads: u64,
    pub updates: u64,
}

impl AccessCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reads(&self) -> u64 {
        self.0.reads.load(Ordering::Relaxed)
    }

    pub fn updates(&self) -> u64 {
        self.0.updates.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot { reads: self.reads(), updates: self.updates() }
    }

    fn read(&self) {
        self.0.reads.fetch_add(1, Ordering::Relaxed);
    }

    fn update(&self) {
        self.0.updates.fetch_add(1, Ordering::Relaxed);
    }
}

/// A node handle whose `get` counts a read and whose `set`/`incr` count an
/// update. Children inherit the same counters.
#[derive(Debug, Clone)]
pub struct MeteredNode {
    node: NodeHandle,
    counters: AccessCounters,
}

impl MeteredNode {
    pub fn new(node: NodeHandle, counters: AccessCounters) -> Self {
        MeteredNode { node, counters }
    }

    pub fn node(&self) -> &NodeHandle {
        &self.node
    }

    pub fn counters(&self) -> &AccessCounters {
        &self.counters
    }

    pub fn child(&self, subscript: impl Subscript) -> Result<Self> {
        Ok(MeteredNode { node: self.node.child(subscript)?, counters: self.counters.clone() })
    }

    pub fn get<S: Store + ?Sized>(&self, store: &mut S) -> Result<Option<Vec<u8>>> {
        self.counters.read();
        store.get(&self.node)
    }

    pub fn get_or<S: Store + ?Sized>(&self, store: &mut S, default: &[u8]) -> Result<Vec<u8>> {
        self.counters.read();
        self.node.get_or(store, default)
    }

    pub fn get_u64_or<S: Store + ?Sized>(&self, store: &mut S, default: u64) -> Result<u64> {
        self.counters.read();
        self.node.get_u64_or(store, default)
    }

    pub fn set<S: Store + ?Sized>(&self, store: &mut S, value: impl AsRef<[u8]>) -> Result<()> {
        self.counters.update();
        store.set(&self.node, value.as_ref())
    }

    pub fn incr<S: Store + ?Sized>(&self, store: &mut S, delta: i64) -> Result<i64> {
        self.counters.update();
        store.incr(&self.node, delta)
    }
}

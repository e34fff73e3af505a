//! Optimistic transactions over the cell map.
//!
//! A body runs against a [`TxnView`] that records the version of every cell
//! it reads and buffers every write. Commit locks the touched shards,
//! checks the recorded versions and applies the writes; any mismatch throws
//! the attempt away and the body runs again.

use std::collections::{BTreeMap, HashMap};
use std::thread;

use rand::Rng;

use super::cells::{CellMap, Footprint};
use crate::error::{Error, Result};
use crate::store::{add_checked, check_value, NodeHandle, Store, TxnBody};

/// Attempts run back to back before backing off.
const EAGER_ATTEMPTS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Commit {
    Applied,
    Conflict,
}

pub(crate) struct TxnView<'a> {
    cells: &'a CellMap,
    epoch: u64,
    reads: HashMap<Box<[u8]>, (usize, u64)>,
    writes: BTreeMap<Box<[u8]>, (usize, Vec<u8>)>,
}

impl<'a> TxnView<'a> {
    pub fn new(cells: &'a CellMap) -> Self {
        TxnView { cells, epoch: cells.epoch(), reads: HashMap::new(), writes: BTreeMap::new() }
    }

    pub fn commit(self) -> Commit {
        if self.reads.is_empty() && self.writes.is_empty() {
            return Commit::Applied;
        }
        let mut fp = Footprint::none();
        self.reads.values().for_each(|(s, _)| fp.add(*s));
        self.writes.values().for_each(|(s, _)| fp.add(*s));
        let mut locked = self.cells.lock(fp);
        if locked.epoch() != self.epoch {
            return Commit::Conflict;
        }
        for (key, (shard, version)) in &self.reads {
            if locked.version_raw(*shard, key) != *version {
                return Commit::Conflict;
            }
        }
        for (key, (shard, value)) in &self.writes {
            locked.put_raw(*shard, key, Some(value));
        }
        Commit::Applied
    }
}

impl Store for TxnView<'_> {
    fn get(&mut self, node: &NodeHandle) -> Result<Option<Vec<u8>>> {
        if let Some((_, v)) = self.writes.get(node.encoded()) {
            return Ok(Some(v.clone()));
        }
        let (value, version) = self.cells.read(node);
        self.reads
            .entry(node.encoded().into())
            .or_insert((self.cells.shard_of(node), version));
        Ok(value)
    }

    fn set(&mut self, node: &NodeHandle, value: &[u8]) -> Result<()> {
        check_value(value)?;
        self.writes
            .insert(node.encoded().into(), (self.cells.shard_of(node), value.to_vec()));
        Ok(())
    }

    fn incr(&mut self, node: &NodeHandle, delta: i64) -> Result<i64> {
        let current = self.get(node)?;
        let next = add_checked(current.as_deref(), delta, node)?;
        self.set(node, next.to_string().as_bytes())?;
        Ok(next)
    }

    fn delete_tree(&mut self, _node: &NodeHandle) -> Result<()> {
        Err(Error::Unsupported("delete_tree inside a transaction"))
    }

    fn subtree_size(&mut self, _node: &NodeHandle) -> Result<u64> {
        Err(Error::Unsupported("subtree_size inside a transaction"))
    }

    fn exists(&mut self, _node: &NodeHandle) -> Result<bool> {
        Err(Error::Unsupported("exists inside a transaction"))
    }

    fn children(&mut self, _node: &NodeHandle) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        Err(Error::Unsupported("children inside a transaction"))
    }

    // nested transactions join the enclosing one
    fn run_transaction(&mut self, body: &mut TxnBody<'_>) -> Result<u32> {
        body(self)?;
        Ok(1)
    }
}

/// Runs `body` until a run commits or `retry_limit` attempts are used up.
pub(crate) fn run(cells: &CellMap, retry_limit: u32, body: &mut TxnBody<'_>) -> Result<u32> {
    let mut rng = None;
    for attempt in 1..=retry_limit {
        if attempt > EAGER_ATTEMPTS {
            let rng = rng.get_or_insert_with(rand::rng);
            let spins = rng.random_range(1..=(attempt - EAGER_ATTEMPTS).min(32));
            for _ in 0..spins {
                thread::yield_now();
            }
        }
        let mut view = TxnView::new(cells);
        body(&mut view)?;
        if view.commit() == Commit::Applied {
            return Ok(attempt);
        }
    }
    Err(Error::RetryLimit(retry_limit))
}

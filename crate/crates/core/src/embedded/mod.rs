//! In-process shared hierarchical store.
//!
//! [`EmbeddedStore`] is the shared database; each worker context opens its
//! own [`Session`]. Single-node operations are linearizable, transactions
//! are optimistic with per-cell versions, and sessions own hierarchical
//! locks that are released when the session is dropped, including during
//! a panic unwind.

mod cells;
mod locks;
mod txn;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub(crate) use cells::{CellMap, Footprint, LockedCells};
pub use locks::{LockTable, OwnerId};

use crate::error::{Error, Result};
use crate::store::{add_checked, check_value, Key, NodeHandle, Store, TxnBody, WatchMulti};

pub const DEFAULT_RETRY_LIMIT: u32 = 10_000;
pub const DEFAULT_SHARDS: usize = 64;

struct Db {
    cells: CellMap,
    locks: LockTable,
    next_owner: AtomicU64,
    retry_limit: u32,
}

/// Shared handle to one in-process database. Clones refer to the same data.
#[derive(Clone)]
pub struct EmbeddedStore {
    db: Arc<Db>,
}

impl Default for EmbeddedStore {
    fn default() -> Self {
        Self::new()
    }
}

impl EmbeddedStore {
    pub fn new() -> Self {
        Self::with_options(DEFAULT_SHARDS, DEFAULT_RETRY_LIMIT)
    }

    pub fn with_options(shards: usize, retry_limit: u32) -> Self {
        EmbeddedStore {
            db: Arc::new(Db {
                cells: CellMap::new(shards),
                locks: LockTable::new(),
                next_owner: AtomicU64::new(1),
                retry_limit: retry_limit.max(1),
            }),
        }
    }

    /// Opens a worker context with a fresh owner id.
    pub fn session(&self) -> Session {
        Session {
            db: self.db.clone(),
            owner: self.db.next_owner.fetch_add(1, Ordering::Relaxed),
            watched: Vec::new(),
            watch_epoch: 0,
            queued: None,
        }
    }

    /// Locks currently held, with their owners.
    pub fn held_locks(&self) -> Vec<(Key, OwnerId)> {
        self.db.locks.held()
    }

    pub fn lock_waiters(&self) -> usize {
        self.db.locks.waiting()
    }

    /// Removes every cell.
    pub fn flush(&self) {
        self.db.cells.flush();
    }

    pub(crate) fn cells(&self) -> &CellMap {
        &self.db.cells
    }
}

#[derive(Debug)]
enum Queued {
    Set(NodeHandle, Vec<u8>),
    DeleteTree(NodeHandle),
}

/// One worker context on an [`EmbeddedStore`].
pub struct Session {
    db: Arc<Db>,
    owner: OwnerId,
    // (node, version when watched)
    watched: Vec<(NodeHandle, u64)>,
    watch_epoch: u64,
    queued: Option<Vec<Queued>>,
}

impl Session {
    pub fn owner(&self) -> OwnerId {
        self.owner
    }

    fn not_queued(&self, what: &'static str) -> Result<()> {
        if self.queued.is_some() {
            return Err(Error::InvalidState(what));
        }
        Ok(())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.db.locks.release_all(self.owner);
    }
}

impl Store for Session {
    fn get(&mut self, node: &NodeHandle) -> Result<Option<Vec<u8>>> {
        self.not_queued("get cannot be queued inside MULTI")?;
        Ok(self.db.cells.read(node).0)
    }

    fn set(&mut self, node: &NodeHandle, value: &[u8]) -> Result<()> {
        check_value(value)?;
        if let Some(q) = self.queued.as_mut() {
            q.push(Queued::Set(node.clone(), value.to_vec()));
            return Ok(());
        }
        self.db.cells.lock_node(node).put(node, Some(value));
        Ok(())
    }

    fn incr(&mut self, node: &NodeHandle, delta: i64) -> Result<i64> {
        self.not_queued("incr cannot be queued inside MULTI")?;
        let mut cells = self.db.cells.lock_node(node);
        let next = add_checked(cells.get(node), delta, node)?;
        cells.put(node, Some(next.to_string().as_bytes()));
        Ok(next)
    }

    fn delete_tree(&mut self, node: &NodeHandle) -> Result<()> {
        if let Some(q) = self.queued.as_mut() {
            q.push(Queued::DeleteTree(node.clone()));
            return Ok(());
        }
        self.db.cells.lock(self.db.cells.subtree_footprint(node)).delete_tree(node);
        Ok(())
    }

    fn set_tree(&mut self, node: &NodeHandle, entries: &[(Vec<u8>, Vec<u8>)]) -> Result<()> {
        let children = entries
            .iter()
            .map(|(k, v)| {
                check_value(v)?;
                Ok((node.child(k.as_slice())?, v))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(q) = self.queued.as_mut() {
            q.extend(children.into_iter().map(|(c, v)| Queued::Set(c, v.clone())));
            return Ok(());
        }
        if children.is_empty() {
            return Ok(());
        }
        let mut fp = Footprint::none();
        children.iter().for_each(|(c, _)| fp.add(self.db.cells.shard_of(c)));
        let mut cells = self.db.cells.lock(fp);
        for (c, v) in &children {
            cells.put(c, Some(v));
        }
        Ok(())
    }

    fn subtree_size(&mut self, node: &NodeHandle) -> Result<u64> {
        self.not_queued("subtree_size cannot be queued inside MULTI")?;
        Ok(self.db.cells.lock(self.db.cells.subtree_footprint(node)).subtree_size(node))
    }

    fn exists(&mut self, node: &NodeHandle) -> Result<bool> {
        self.not_queued("exists cannot be queued inside MULTI")?;
        Ok(self.db.cells.lock(self.db.cells.subtree_footprint(node)).exists(node))
    }

    fn children(&mut self, node: &NodeHandle) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.not_queued("children cannot be queued inside MULTI")?;
        Ok(self.db.cells.lock(self.db.cells.subtree_footprint(node)).children(node))
    }

    fn run_transaction(&mut self, body: &mut TxnBody<'_>) -> Result<u32> {
        self.not_queued("transaction inside MULTI")?;
        txn::run(&self.db.cells, self.db.retry_limit, body)
    }

    fn supports_locks(&self) -> bool {
        true
    }

    fn grab(&mut self, lock: &NodeHandle, timeout: Option<Duration>) -> Result<bool> {
        self.db.locks.grab(lock, self.owner, timeout)
    }

    fn release(&mut self, lock: &NodeHandle) -> Result<()> {
        self.db.locks.release(lock, self.owner)
    }
}

impl WatchMulti for Session {
    fn watch(&mut self, nodes: &[&NodeHandle]) -> Result<()> {
        self.not_queued("WATCH inside MULTI is not allowed")?;
        if self.watched.is_empty() {
            self.watch_epoch = self.db.cells.epoch();
        }
        for n in nodes {
            let (_, version) = self.db.cells.read(n);
            self.watched.push(((*n).clone(), version));
        }
        Ok(())
    }

    fn unwatch(&mut self) -> Result<()> {
        self.watched.clear();
        Ok(())
    }

    fn multi(&mut self) -> Result<()> {
        self.not_queued("MULTI calls can not be nested")?;
        self.queued = Some(Vec::new());
        Ok(())
    }

    fn exec(&mut self) -> Result<bool> {
        let queue = self.queued.take().ok_or(Error::InvalidState("EXEC without MULTI"))?;
        let watched = std::mem::take(&mut self.watched);
        let cells = &self.db.cells;

        let mut fp = Footprint::none();
        for (n, _) in &watched {
            fp.add(cells.shard_of(n));
        }
        for q in &queue {
            match q {
                Queued::Set(n, _) => fp.add(cells.shard_of(n)),
                Queued::DeleteTree(n) => fp.merge(cells.subtree_footprint(n)),
            }
        }
        let mut locked = cells.lock(fp);
        if !watched.is_empty() && locked.epoch() != self.watch_epoch {
            return Ok(false);
        }
        if watched.iter().any(|(n, v)| locked.version(n) != *v) {
            return Ok(false);
        }
        for q in &queue {
            match q {
                Queued::Set(n, v) => locked.put(n, Some(v)),
                Queued::DeleteTree(n) => {
                    locked.delete_tree(n);
                }
            }
        }
        Ok(true)
    }

    fn discard(&mut self) -> Result<()> {
        self.queued.take().ok_or(Error::InvalidState("DISCARD without MULTI"))?;
        self.watched.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::transaction;
    use std::cell::Cell;

    fn node(var: &str, subs: &[&str]) -> NodeHandle {
        NodeHandle::new(var, subs).unwrap()
    }

    #[test]
    fn get_set_defaults() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let longest = node("longest", &[]);
        assert_eq!(longest.get(&mut s).unwrap(), None);
        assert_eq!(longest.get_or(&mut s, b"0").unwrap(), b"0");
        longest.set(&mut s, "7").unwrap();
        assert_eq!(longest.get(&mut s).unwrap(), Some(b"7".to_vec()));
        longest.set(&mut s, "").unwrap();
        assert_eq!(longest.get(&mut s).unwrap(), Some(Vec::new()));
    }

    #[test]
    fn oversize_value_rejected() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let big = vec![0u8; crate::store::MAX_VALUE_LEN + 1];
        assert!(matches!(node("v", &[]).set(&mut s, &big), Err(Error::ValueTooLarge(_))));
    }

    #[test]
    fn incr_semantics() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let taken = node("blocks", &["1", "taken"]);
        assert_eq!(taken.incr(&mut s, 1).unwrap(), 1);
        assert_eq!(taken.incr(&mut s, 1).unwrap(), 2);
        let queued = node("queued", &[]);
        queued.set(&mut s, "4").unwrap();
        assert_eq!(queued.incr(&mut s, -1).unwrap(), 3);
        let bad = node("bad", &[]);
        bad.set(&mut s, "x").unwrap();
        assert!(matches!(bad.incr(&mut s, 1), Err(Error::NotAnInteger { .. })));
        bad.set(&mut s, i64::MAX.to_string()).unwrap();
        assert!(matches!(bad.incr(&mut s, 1), Err(Error::IncrementOverflow { .. })));
    }

    #[test]
    fn tree_operations() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let blocks = node("blocks", &[]);
        blocks
            .set_tree(&mut s, [(1, "0"), (2, "10"), (3, "20"), (4, "30"), (5, "40")])
            .unwrap();
        assert_eq!(blocks.child(2).unwrap().get(&mut s).unwrap(), Some(b"10".to_vec()));
        assert_eq!(blocks.subtree_size(&mut s).unwrap(), 5);
        blocks.child(5).unwrap().delete_tree(&mut s).unwrap();
        assert_eq!(blocks.subtree_size(&mut s).unwrap(), 4);
        blocks.set_tree(&mut s, Vec::<(u32, &str)>::new()).unwrap();
        assert_eq!(blocks.subtree_size(&mut s).unwrap(), 4);
        blocks.delete_tree(&mut s).unwrap();
        assert_eq!(blocks.subtree_size(&mut s).unwrap(), 0);
        assert!(!s.exists(&blocks).unwrap());
        // deleting an absent node is fine
        node("nothing", &[]).delete_tree(&mut s).unwrap();
    }

    #[test]
    fn transaction_single_attempt_without_contention() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let n = node("longest", &[]);
        let attempts = s
            .run_transaction(&mut |tx| {
                let v = n.get_u64_or(tx, 0)?;
                n.set(tx, (v + 5).to_string())
            })
            .unwrap();
        assert_eq!(attempts, 1);
        assert_eq!(n.get_u64_or(&mut s, 0).unwrap(), 5);
    }

    #[test]
    fn read_only_transaction_bumps_nothing() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let n = node("k", &[]);
        n.set(&mut s, "1").unwrap();
        let before = db.cells().read(&n).1;
        let v = transaction(&mut s, |tx| n.get(tx)).unwrap();
        assert_eq!(v, Some(b"1".to_vec()));
        assert_eq!(db.cells().read(&n).1, before);
        assert_eq!(s.run_transaction(&mut |_| Ok(())).unwrap(), 1);
    }

    #[test]
    fn injected_conflict_forces_retry() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let mut other = db.session();
        let n = node("counter", &[]);
        let runs = Cell::new(0);
        let attempts = s
            .run_transaction(&mut |tx| {
                runs.set(runs.get() + 1);
                let v = n.get_u64_or(tx, 0)?;
                if runs.get() == 1 {
                    n.incr(&mut other, 10).unwrap();
                }
                n.set(tx, (v + 1).to_string())
            })
            .unwrap();
        assert!(attempts >= 2);
        assert_eq!(n.get_u64_or(&mut s, 0).unwrap(), 11);
    }

    #[test]
    fn body_error_aborts_without_commit() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let n = node("k", &[]);
        let r = s.run_transaction(&mut |tx| {
            n.set(tx, "1")?;
            Err(Error::InvalidState("boom"))
        });
        assert!(r.is_err());
        assert_eq!(n.get(&mut s).unwrap(), None);
    }

    #[test]
    fn retry_limit_is_reported() {
        let db = EmbeddedStore::with_options(4, 3);
        let mut s = db.session();
        let mut other = db.session();
        let n = node("k", &[]);
        let r = s.run_transaction(&mut |tx| {
            n.get(tx)?;
            n.incr(&mut other, 1)?;
            n.set(tx, "x")
        });
        assert!(matches!(r, Err(Error::RetryLimit(3))));
    }

    #[test]
    fn watch_multi_exec() {
        let db = EmbeddedStore::new();
        let mut a = db.session();
        let mut b = db.session();
        let k = node("k", &[]);

        a.watch(&[&k]).unwrap();
        a.multi().unwrap();
        k.set(&mut a, "1").unwrap();
        assert!(matches!(k.get(&mut a), Err(Error::InvalidState(_))));
        assert!(a.exec().unwrap());
        assert_eq!(k.get(&mut a).unwrap(), Some(b"1".to_vec()));

        a.watch(&[&k]).unwrap();
        k.set(&mut b, "other").unwrap();
        a.multi().unwrap();
        k.set(&mut a, "mine").unwrap();
        assert!(!a.exec().unwrap());
        assert_eq!(k.get(&mut a).unwrap(), Some(b"other".to_vec()));

        assert!(matches!(a.exec(), Err(Error::InvalidState(_))));
        a.multi().unwrap();
        assert!(matches!(a.multi(), Err(Error::InvalidState(_))));
        a.discard().unwrap();
    }

    #[test]
    fn dropped_session_releases_locks() {
        let db = EmbeddedStore::new();
        let mut a = db.session();
        let mut b = db.session();
        let f = node("finished", &[]);
        f.child("1").unwrap().grab(&mut a, None).unwrap();
        assert!(!f.grab(&mut b, Some(Duration::from_millis(10))).unwrap());
        drop(a);
        assert!(f.grab(&mut b, Some(Duration::ZERO)).unwrap());
    }
}

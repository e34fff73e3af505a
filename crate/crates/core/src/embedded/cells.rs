//! Sharded map of versioned cells.
//!
//! Cells live in `BTreeMap`s keyed by encoded node path. A node's shard is
//! chosen from its varname and first subscript, so every descendant of a
//! subscripted node shares its shard; only whole-variable operations span
//! all shards. Deleting a cell leaves a tombstone so its version keeps
//! increasing and optimistic readers of an absent cell still see conflicts.

use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{RwLock, RwLockWriteGuard};

use crate::store::{decode_segment, NodeHandle};

#[derive(Debug, Clone, Default)]
pub(crate) struct VersionedCell {
    pub value: Option<Box<[u8]>>,
    pub version: u64,
}

type Shard = BTreeMap<Box<[u8]>, VersionedCell>;

/// Set of shards an operation needs write access to.
#[derive(Debug, Clone)]
pub(crate) enum Footprint {
    Shards(Vec<usize>),
    All,
}

impl Footprint {
    pub fn none() -> Self {
        Footprint::Shards(Vec::new())
    }

    pub fn add(&mut self, shard: usize) {
        if let Footprint::Shards(v) = self {
            if !v.contains(&shard) {
                v.push(shard);
            }
        }
    }

    pub fn merge(&mut self, other: Footprint) {
        match other {
            Footprint::All => *self = Footprint::All,
            Footprint::Shards(v) => v.into_iter().for_each(|s| self.add(s)),
        }
    }
}

pub(crate) struct CellMap {
    shards: Box<[RwLock<Shard>]>,
    mask: usize,
    // bumped by flush; a transaction spanning a flush must retry
    epoch: AtomicU64,
}

impl CellMap {
    pub fn new(shard_count: usize) -> Self {
        let n = shard_count.max(1).next_power_of_two();
        CellMap {
            shards: (0..n).map(|_| RwLock::new(Shard::new())).collect(),
            mask: n - 1,
            epoch: AtomicU64::new(0),
        }
    }

    pub fn shard_of(&self, node: &NodeHandle) -> usize {
        node.shard_hash() as usize & self.mask
    }

    /// Shards holding `node` and all of its descendants.
    pub fn subtree_footprint(&self, node: &NodeHandle) -> Footprint {
        if node.subscript_count() == 0 {
            Footprint::All
        } else {
            Footprint::Shards(vec![self.shard_of(node)])
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch.load(Ordering::Acquire)
    }

    /// Value and version of one cell. Never-written cells are version 0.
    pub fn read(&self, node: &NodeHandle) -> (Option<Vec<u8>>, u64) {
        let shard = self.shards[self.shard_of(node)].read();
        match shard.get(node.encoded()) {
            Some(c) => (c.value.as_deref().map(<[u8]>::to_vec), c.version),
            None => (None, 0),
        }
    }

    /// Write-locks the given shards in ascending order.
    pub fn lock(&self, footprint: Footprint) -> LockedCells<'_> {
        let indices: Vec<usize> = match footprint {
            Footprint::All => (0..self.shards.len()).collect(),
            Footprint::Shards(mut v) => {
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        let guards = indices.into_iter().map(|i| (i, self.shards[i].write())).collect();
        LockedCells { map: self, guards }
    }

    pub fn lock_node(&self, node: &NodeHandle) -> LockedCells<'_> {
        self.lock(Footprint::Shards(vec![self.shard_of(node)]))
    }

    pub fn flush(&self) {
        let mut cells = self.lock(Footprint::All);
        self.epoch.fetch_add(1, Ordering::AcqRel);
        for (_, g) in cells.guards.iter_mut() {
            g.clear();
        }
    }
}

/// Write guards over a set of shards. Everything done through one
/// `LockedCells` is atomic with respect to other callers.
pub(crate) struct LockedCells<'a> {
    map: &'a CellMap,
    guards: Vec<(usize, RwLockWriteGuard<'a, Shard>)>,
}

impl<'a> LockedCells<'a> {
    fn shard(&self, idx: usize) -> &Shard {
        let pos = self
            .guards
            .binary_search_by_key(&idx, |(i, _)| *i)
            .expect("shard outside the locked footprint");
        &self.guards[pos].1
    }

    fn shard_mut(&mut self, idx: usize) -> &mut Shard {
        let pos = self
            .guards
            .binary_search_by_key(&idx, |(i, _)| *i)
            .expect("shard outside the locked footprint");
        &mut self.guards[pos].1
    }

    fn subtree_shards(&self, node: &NodeHandle) -> Vec<usize> {
        if node.subscript_count() == 0 {
            self.guards.iter().map(|(i, _)| *i).collect()
        } else {
            vec![self.map.shard_of(node)]
        }
    }

    pub fn get(&self, node: &NodeHandle) -> Option<&[u8]> {
        self.get_raw(self.map.shard_of(node), node.encoded())
    }

    pub fn get_raw(&self, shard: usize, key: &[u8]) -> Option<&[u8]> {
        self.shard(shard).get(key).and_then(|c| c.value.as_deref())
    }

    pub fn version_raw(&self, shard: usize, key: &[u8]) -> u64 {
        self.shard(shard).get(key).map_or(0, |c| c.version)
    }

    pub fn version(&self, node: &NodeHandle) -> u64 {
        self.version_raw(self.map.shard_of(node), node.encoded())
    }

    /// Stores (`Some`) or clears (`None`) a cell, bumping its version.
    pub fn put_raw(&mut self, shard: usize, key: &[u8], value: Option<&[u8]>) {
        let s = self.shard_mut(shard);
        let value = value.map(Box::<[u8]>::from);
        match s.get_mut(key) {
            Some(c) => {
                c.value = value;
                c.version += 1;
            }
            None => {
                s.insert(key.into(), VersionedCell { value, version: 1 });
            }
        }
    }

    pub fn put(&mut self, node: &NodeHandle, value: Option<&[u8]>) {
        let shard = self.map.shard_of(node);
        self.put_raw(shard, node.encoded(), value);
    }

    /// Bumps the version without changing the value.
    pub fn touch(&mut self, node: &NodeHandle) {
        let s = self.shard_mut(self.map.shard_of(node));
        match s.get_mut(node.encoded()) {
            Some(c) => c.version += 1,
            None => {
                s.insert(node.encoded().into(), VersionedCell { value: None, version: 1 });
            }
        }
    }

    /// Clears the node and every descendant. Returns whether anything held a value.
    pub fn delete_tree(&mut self, node: &NodeHandle) -> bool {
        let prefix = node.encoded();
        let mut existed = false;
        for idx in self.subtree_shards(node) {
            let s = self.shard_mut(idx);
            let range = s.range_mut::<[u8], _>((Bound::Included(prefix), Bound::Unbounded));
            for (k, c) in range {
                if !k.starts_with(prefix) {
                    break;
                }
                if c.value.is_some() {
                    c.value = None;
                    c.version += 1;
                    existed = true;
                }
            }
        }
        existed
    }

    fn for_each_child(&self, node: &NodeHandle, mut f: impl FnMut(Vec<u8>, &[u8])) {
        let prefix = node.encoded();
        for idx in self.subtree_shards(node) {
            let s = self.shard(idx);
            for (k, c) in s.range::<[u8], _>((Bound::Excluded(prefix), Bound::Unbounded)) {
                if !k.starts_with(prefix) {
                    break;
                }
                let Some(value) = c.value.as_deref() else { continue };
                if let Some((sub, end)) = decode_segment(k, prefix.len()) {
                    if end == k.len() {
                        f(sub, value);
                    }
                }
            }
        }
    }

    pub fn subtree_size(&self, node: &NodeHandle) -> u64 {
        let mut n = 0;
        self.for_each_child(node, |_, _| n += 1);
        n
    }

    pub fn children(&self, node: &NodeHandle) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut out = Vec::new();
        self.for_each_child(node, |sub, v| out.push((sub, v.to_vec())));
        out.sort();
        out
    }

    pub fn exists(&self, node: &NodeHandle) -> bool {
        let prefix = node.encoded();
        self.subtree_shards(node).into_iter().any(|idx| {
            self.shard(idx)
                .range::<[u8], _>((Bound::Included(prefix), Bound::Unbounded))
                .take_while(|(k, _)| k.starts_with(prefix))
                .any(|(_, c)| c.value.is_some())
        })
    }

    /// Clears every value in the locked shards, keeping versions monotone.
    pub fn clear_values(&mut self) {
        for (_, g) in self.guards.iter_mut() {
            for c in g.values_mut().filter(|c| c.value.is_some()) {
                c.value = None;
                c.version += 1;
            }
        }
    }

    pub fn epoch(&self) -> u64 {
        self.map.epoch()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(var: &str, subs: &[&str]) -> NodeHandle {
        NodeHandle::new(var, subs).unwrap()
    }

    #[test]
    fn versions_increase_through_delete() {
        let map = CellMap::new(4);
        let n = node("k", &[]);
        assert_eq!(map.read(&n), (None, 0));
        map.lock_node(&n).put(&n, Some(b"1"));
        assert_eq!(map.read(&n), (Some(b"1".to_vec()), 1));
        assert!(map.lock(map.subtree_footprint(&n)).delete_tree(&n));
        assert_eq!(map.read(&n), (None, 2));
        map.lock_node(&n).put(&n, Some(b"2"));
        assert_eq!(map.read(&n).1, 3);
    }

    #[test]
    fn children_are_immediate_only() {
        let map = CellMap::new(8);
        let blocks = node("blocks", &[]);
        {
            let mut c = map.lock(Footprint::All);
            c.put(&blocks, Some(b"root"));
            for i in 1..=5 {
                c.put(&blocks.child(i).unwrap(), Some(i.to_string().as_bytes()));
            }
            c.put(&node("blocks", &["1", "taken"]), Some(b"1"));
            c.put(&node("blocksx", &["1"]), Some(b"other var"));
        }
        let c = map.lock(Footprint::All);
        assert_eq!(c.subtree_size(&blocks), 5);
        let kids = c.children(&blocks);
        assert_eq!(kids.len(), 5);
        assert_eq!(kids[0], (b"1".to_vec(), b"1".to_vec()));
        assert_eq!(c.subtree_size(&node("blocks", &["1"])), 1);
        assert_eq!(c.subtree_size(&node("absent", &[])), 0);
    }

    #[test]
    fn delete_tree_spares_siblings() {
        let map = CellMap::new(8);
        let w = node("worker", &[]);
        {
            let mut c = map.lock(Footprint::All);
            c.put(&node("worker", &["123"]), Some(b"1"));
            c.put(&node("worker", &["456"]), Some(b"1"));
            c.put(&node("workers", &[]), Some(b"keep"));
        }
        let mut c = map.lock(Footprint::All);
        assert!(c.delete_tree(&w));
        assert_eq!(c.subtree_size(&w), 0);
        assert!(!c.exists(&w));
        assert_eq!(c.get(&node("workers", &[])), Some(&b"keep"[..]));
        assert!(!c.delete_tree(&w));
    }

    #[test]
    fn touch_keeps_value() {
        let map = CellMap::new(2);
        let n = node("step", &[]);
        let mut c = map.lock(Footprint::All);
        c.touch(&n);
        assert_eq!(c.get(&n), None);
        assert_eq!(c.version(&n), 1);
        assert!(!c.exists(&n));
    }
}

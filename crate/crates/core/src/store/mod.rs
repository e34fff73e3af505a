//! Backend-neutral store interface.
//!
//! Both backends expose the same hierarchical model. A scalar Redis key `k`
//! is the bare node `k`; a Redis hash field `k[f]` is the one-subscript node
//! `k(f)`. Values are byte strings and integers are stored as decimal ASCII.

mod metered;
mod node;

use std::time::Duration;

pub use metered::{AccessCounters, CounterSnapshot, MeteredNode};
pub use node::{Key, NodeHandle, Subscript, MAX_SUBSCRIPT_LEN, MAX_VALUE_LEN};

pub(crate) use node::decode_segment;

use crate::error::{Error, Result};

/// Body of a restartable transaction. It may run several times.
pub type TxnBody<'a> = dyn FnMut(&mut dyn Store) -> Result<()> + 'a;

/// Operations every backend provides.
///
/// A `Store` value belongs to one worker context (an embedded session or a
/// RESP connection); the data behind it is shared.
pub trait Store {
    fn get(&mut self, node: &NodeHandle) -> Result<Option<Vec<u8>>>;

    fn set(&mut self, node: &NodeHandle, value: &[u8]) -> Result<()>;

    /// Atomic add. An absent node counts as 0. Returns the new value.
    fn incr(&mut self, node: &NodeHandle, delta: i64) -> Result<i64>;

    /// Removes the node's value and everything below it.
    fn delete_tree(&mut self, node: &NodeHandle) -> Result<()>;

    /// Sets `node(k) = v` for every entry.
    fn set_tree(&mut self, node: &NodeHandle, entries: &[(Vec<u8>, Vec<u8>)]) -> Result<()> {
        for (k, v) in entries {
            self.set(&node.child(k.as_slice())?, v)?;
        }
        Ok(())
    }

    /// Number of immediate children holding a value.
    fn subtree_size(&mut self, node: &NodeHandle) -> Result<u64>;

    /// True if the node has a value or any descendant does.
    fn exists(&mut self, node: &NodeHandle) -> Result<bool>;

    /// Immediate children holding a value, as (subscript, value) pairs.
    fn children(&mut self, node: &NodeHandle) -> Result<Vec<(Vec<u8>, Vec<u8>)>>;

    /// Runs `body` as an optimistic transaction, re-running it on conflict.
    /// Returns the number of attempts used.
    fn run_transaction(&mut self, body: &mut TxnBody<'_>) -> Result<u32>;

    fn supports_locks(&self) -> bool {
        false
    }

    /// Blocks until the hierarchical lock on `lock` is held, or the timeout
    /// passes (returns false).
    fn grab(&mut self, lock: &NodeHandle, timeout: Option<Duration>) -> Result<bool> {
        let _ = (lock, timeout);
        Err(Error::Unsupported("hierarchical locks"))
    }

    fn release(&mut self, lock: &NodeHandle) -> Result<()> {
        let _ = lock;
        Err(Error::Unsupported("hierarchical locks"))
    }
}

/// Redis-style explicit optimistic batches.
///
/// Between [`multi`](WatchMulti::multi) and [`exec`](WatchMulti::exec),
/// `set`, `set_tree` and `delete_tree` are queued rather than applied; other
/// store calls fail.
pub trait WatchMulti: Store {
    fn watch(&mut self, nodes: &[&NodeHandle]) -> Result<()>;
    fn unwatch(&mut self) -> Result<()>;
    fn multi(&mut self) -> Result<()>;
    /// Applies the queue atomically unless a watched node changed since it
    /// was watched. Clears all watches either way.
    fn exec(&mut self) -> Result<bool>;
    fn discard(&mut self) -> Result<()>;
}

/// Runs `body` transactionally and returns the value of its committed run.
pub fn transaction<S, T, F>(store: &mut S, mut body: F) -> Result<T>
where
    S: Store + ?Sized,
    F: FnMut(&mut dyn Store) -> Result<T>,
{
    let mut out = None;
    store.run_transaction(&mut |tx| {
        out = Some(body(tx)?);
        Ok(())
    })?;
    Ok(out.expect("committed transaction ran its body"))
}

pub(crate) fn parse_i64(bytes: &[u8], node: &NodeHandle) -> Result<i64> {
    std::str::from_utf8(bytes)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::NotAnInteger { node: node.to_string() })
}

pub(crate) fn parse_u64(bytes: &[u8], node: &NodeHandle) -> Result<u64> {
    std::str::from_utf8(bytes)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::NotAnInteger { node: node.to_string() })
}

pub(crate) fn check_value(value: &[u8]) -> Result<()> {
    if value.len() > MAX_VALUE_LEN {
        return Err(Error::ValueTooLarge(value.len()));
    }
    Ok(())
}

pub(crate) fn add_checked(current: Option<&[u8]>, delta: i64, node: &NodeHandle) -> Result<i64> {
    let base = match current {
        Some(v) => parse_i64(v, node)?,
        None => 0,
    };
    base.checked_add(delta)
        .ok_or_else(|| Error::IncrementOverflow { node: node.to_string() })
}

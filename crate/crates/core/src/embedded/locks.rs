//! Hierarchical lock table.
//!
//! Two lock paths conflict iff one is a path prefix of the other, so holding
//! `trigger` blocks `trigger("42")` and holding `finished("a")` blocks
//! `finished`. Waiters are served first come first served among those that
//! conflict with each other.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};
use crate::store::{Key, NodeHandle};

/// Identifies one worker context (an embedded session).
pub type OwnerId = u64;

#[derive(Debug)]
struct Held {
    path: NodeHandle,
    owner: OwnerId,
}

#[derive(Debug)]
struct Waiter {
    ticket: u64,
    path: NodeHandle,
}

#[derive(Debug, Default)]
struct LockState {
    held: Vec<Held>,
    queue: VecDeque<Waiter>,
    next_ticket: u64,
}

fn conflicts(a: &NodeHandle, b: &NodeHandle) -> bool {
    a.is_prefix_of(b) || b.is_prefix_of(a)
}

impl LockState {
    fn grantable(&self, ticket: u64, path: &NodeHandle, owner: OwnerId) -> bool {
        if self.held.iter().any(|h| h.owner != owner && conflicts(&h.path, path)) {
            return false;
        }
        // an earlier conflicting waiter goes first
        !self
            .queue
            .iter()
            .take_while(|w| w.ticket != ticket)
            .any(|w| conflicts(&w.path, path))
    }

    fn dequeue(&mut self, ticket: u64) {
        self.queue.retain(|w| w.ticket != ticket);
    }
}

#[derive(Debug, Default)]
pub struct LockTable {
    state: Mutex<LockState>,
    changed: Condvar,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Acquires `path` for `owner`, waiting up to `timeout` (forever if
    /// `None`). Re-grabbing a path the owner already holds succeeds at once.
    pub fn grab(&self, path: &NodeHandle, owner: OwnerId, timeout: Option<Duration>) -> Result<bool> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.state.lock();
        for h in st.held.iter().filter(|h| h.owner == owner) {
            if h.path == *path {
                return Ok(true);
            }
            if conflicts(&h.path, path) {
                return Err(Error::SelfConflict { requested: path.to_string(), held: h.path.to_string() });
            }
        }

        let ticket = st.next_ticket;
        st.next_ticket += 1;
        st.queue.push_back(Waiter { ticket, path: path.clone() });
        loop {
            if st.grantable(ticket, path, owner) {
                st.dequeue(ticket);
                st.held.push(Held { path: path.clone(), owner });
                debug_assert!(pairwise_compatible(&st.held));
                self.changed.notify_all();
                return Ok(true);
            }
            match deadline {
                None => self.changed.wait(&mut st),
                Some(d) => {
                    if self.changed.wait_until(&mut st, d).timed_out() && !st.grantable(ticket, path, owner) {
                        st.dequeue(ticket);
                        self.changed.notify_all();
                        return Ok(false);
                    }
                }
            }
        }
    }

    pub fn release(&self, path: &NodeHandle, owner: OwnerId) -> Result<()> {
        let mut st = self.state.lock();
        let pos = st
            .held
            .iter()
            .position(|h| h.owner == owner && h.path == *path)
            .ok_or_else(|| Error::NotHeld(path.to_string()))?;
        st.held.swap_remove(pos);
        self.changed.notify_all();
        Ok(())
    }

    /// Drops every lock held by `owner`. Called when a worker context ends,
    /// however it ends.
    pub fn release_all(&self, owner: OwnerId) -> usize {
        let mut st = self.state.lock();
        let before = st.held.len();
        st.held.retain(|h| h.owner != owner);
        let n = before - st.held.len();
        if n > 0 {
            self.changed.notify_all();
        }
        n
    }

    /// Currently held locks.
    pub fn held(&self) -> Vec<(Key, OwnerId)> {
        self.state.lock().held.iter().map(|h| (h.path.key(), h.owner)).collect()
    }

    pub fn waiting(&self) -> usize {
        self.state.lock().queue.len()
    }
}

fn pairwise_compatible(held: &[Held]) -> bool {
    held.iter().enumerate().all(|(i, a)| {
        held[i + 1..].iter().all(|b| !conflicts(&a.path, &b.path))
    })
}

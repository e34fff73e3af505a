//! The memoized 3n+1 sequence walk, written against [`Store`] so the same
//! code runs on either backend.
//!
//! Database layout: `step(n)` holds the number of steps from `n` to 1,
//! `longest` the longest sequence seen and `highest` the largest term.
//! Reads and writes of those three nodes go through metered handles; nothing
//! else is counted.

use crate::error::{Error, Result};
use crate::store::{AccessCounters, MeteredNode, NodeHandle, Store, WatchMulti};

/// One 3n+1 step: `3n+1` for odd `n`, `n/2` for even `n`.
pub fn next_term(n: u64) -> Result<u64> {
    match n {
        0 => Err(Error::InvalidState("3n+1 terms start at 1")),
        n if n % 2 == 0 => Ok(n / 2),
        n => n
            .checked_mul(3)
            .and_then(|m| m.checked_add(1))
            .ok_or(Error::Overflow(n)),
    }
}

/// Metered handles to the three nodes a sequence walk touches.
#[derive(Debug, Clone)]
pub struct SequenceNodes {
    pub step: MeteredNode,
    pub longest: MeteredNode,
    pub highest: MeteredNode,
}

impl SequenceNodes {
    pub const STEP: &'static str = "step";
    pub const LONGEST: &'static str = "longest";
    pub const HIGHEST: &'static str = "highest";

    pub fn new(counters: &AccessCounters) -> Result<Self> {
        Ok(SequenceNodes {
            step: NodeHandle::root(Self::STEP)?.metered(counters),
            longest: NodeHandle::root(Self::LONGEST)?.metered(counters),
            highest: NodeHandle::root(Self::HIGHEST)?.metered(counters),
        })
    }

    pub fn counters(&self) -> &AccessCounters {
        self.step.counters()
    }
}

/// What one call to [`sequence`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Walk {
    /// Total steps from the start to 1; 0 if the start was already known.
    pub steps: u64,
    /// Largest term produced by this walk (the start itself is not a candidate).
    pub highest: u64,
    /// Attempts used by the record-update transaction (0 if none ran).
    pub txn_attempts: u32,
}

/// Computes the sequence from `start` into the store.
///
/// Walks until `n == 1` or `step(n)` is already stored, adds the stored
/// remainder, updates `longest`/`highest` in a transaction and writes
/// `step` for every term walked.
pub fn sequence<S: Store + ?Sized>(start: u64, nodes: &SequenceNodes, store: &mut S) -> Result<Walk> {
    if start == 0 {
        return Err(Error::InvalidState("3n+1 sequences start at 1"));
    }
    let mut n = start;
    let mut steps = 0u64;
    let mut highest = 0u64;
    let mut path = Vec::new();

    // the step(n) probe runs before the n > 1 test, as in the reference loop
    while nodes.step.child(n)?.get(store)?.is_none() && n > 1 {
        path.push(n);
        n = next_term(n)?;
        highest = highest.max(n);
        steps += 1;
    }
    if steps == 0 {
        return Ok(Walk::default());
    }
    if n > 1 {
        let junction = nodes.step.child(n)?;
        let rest = junction
            .get(store)?
            .ok_or_else(|| Error::NotAnInteger { node: junction.node().to_string() })?;
        steps += crate::store::parse_u64(&rest, junction.node())?;
    }
    let txn_attempts = update_records_txn(store, nodes, steps, highest)?;
    for (i, &k) in path.iter().enumerate() {
        nodes.step.child(k)?.set(store, (steps - i as u64).to_string())?;
    }
    Ok(Walk { steps, highest, txn_attempts })
}

/// Raises `longest` to `steps` and `highest` to `highest` inside one
/// transaction. Absent nodes read as 0; ties do not write.
pub fn update_records_txn<S: Store + ?Sized>(
    store: &mut S,
    nodes: &SequenceNodes,
    steps: u64,
    highest: u64,
) -> Result<u32> {
    store.run_transaction(&mut |tx| {
        if steps > nodes.longest.get_u64_or(tx, 0)? {
            nodes.longest.set(tx, steps.to_string())?;
        }
        if highest > nodes.highest.get_u64_or(tx, 0)? {
            nodes.highest.set(tx, highest.to_string())?;
        }
        Ok(())
    })
}

/// The same update as an explicit WATCH / MULTI / EXEC loop. Returns the
/// number of EXEC attempts.
pub fn update_records_watch_loop<S: WatchMulti + ?Sized>(
    store: &mut S,
    nodes: &SequenceNodes,
    steps: u64,
    highest: u64,
) -> Result<u32> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        store.watch(&[nodes.longest.node(), nodes.highest.node()])?;
        let db_longest = nodes.longest.get_u64_or(store, 0)?;
        let db_highest = nodes.highest.get_u64_or(store, 0)?;
        store.multi()?;
        if steps > db_longest {
            nodes.longest.set(store, steps.to_string())?;
        }
        if highest > db_highest {
            nodes.highest.set(store, highest.to_string())?;
        }
        if store.exec()? {
            return Ok(attempts);
        }
    }
}

/// Read-then-write without any transaction. Loses updates under
/// concurrency; kept to demonstrate exactly that.
pub fn update_records_unprotected<S: Store + ?Sized>(
    store: &mut S,
    nodes: &SequenceNodes,
    steps: u64,
    highest: u64,
) -> Result<()> {
    if steps > nodes.longest.get_u64_or(store, 0)? {
        nodes.longest.set(store, steps.to_string())?;
    }
    if highest > nodes.highest.get_u64_or(store, 0)? {
        nodes.highest.set(store, highest.to_string())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedded::EmbeddedStore;

    #[test]
    fn next_term_examples() {
        assert_eq!(next_term(6).unwrap(), 3);
        assert_eq!(next_term(7).unwrap(), 22);
        assert_eq!(next_term(16).unwrap(), 8);
        assert_eq!(next_term(1).unwrap(), 4);
    }

    #[test]
    fn next_term_overflow_names_n() {
        let n = u64::MAX / 3 | 1;
        assert!(matches!(next_term(n), Err(Error::Overflow(m)) if m == n));
        // largest odd value that still fits
        let ok = (u64::MAX - 1) / 3;
        let ok = if ok % 2 == 0 { ok - 1 } else { ok };
        assert_eq!(next_term(ok).unwrap(), 3 * ok + 1);
        assert!(next_term(0).is_err());
    }

    #[test]
    fn ties_do_not_write() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let counters = AccessCounters::new();
        let nodes = SequenceNodes::new(&counters).unwrap();
        nodes.longest.node().set(&mut s, "7").unwrap();
        nodes.highest.node().set(&mut s, "16").unwrap();
        update_records_txn(&mut s, &nodes, 7, 16).unwrap();
        update_records_txn(&mut s, &nodes, 5, 16).unwrap();
        assert_eq!(counters.updates(), 0);
        assert_eq!(counters.reads(), 4);
        update_records_txn(&mut s, &nodes, 8, 17).unwrap();
        assert_eq!(counters.updates(), 2);
        assert_eq!(nodes.longest.node().get_u64_or(&mut s, 0).unwrap(), 8);
    }

    #[test]
    fn watch_loop_matches_txn_form() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let counters = AccessCounters::new();
        let nodes = SequenceNodes::new(&counters).unwrap();
        assert_eq!(update_records_watch_loop(&mut s, &nodes, 7, 16).unwrap(), 1);
        assert_eq!(nodes.longest.node().get_u64_or(&mut s, 0).unwrap(), 7);
        assert_eq!(nodes.highest.node().get_u64_or(&mut s, 0).unwrap(), 16);
        assert_eq!(counters.snapshot().reads, 2);
        assert_eq!(counters.snapshot().updates, 2);
    }

    #[test]
    fn start_zero_rejected() {
        let db = EmbeddedStore::new();
        let mut s = db.session();
        let nodes = SequenceNodes::new(&AccessCounters::new()).unwrap();
        assert!(sequence(0, &nodes, &mut s).is_err());
    }
}

//! Store-free reference computation used to check benchmark results.

use std::collections::HashMap;

use crate::collatz::next_term;
use crate::error::Result;

/// Expected outcome of computing starts `1..=limit` in ascending order in a
/// single context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub longest: u64,
    pub highest: u64,
    /// Steps to reach 1 for every term seen, excluding 1 itself.
    pub steps: HashMap<u64, u64>,
    /// Metered reads a single worker performs.
    pub reads: u64,
    /// Metered updates a single worker performs.
    pub updates: u64,
}

pub fn oracle(limit: u64) -> Result<OracleResult> {
    let mut r = OracleResult { longest: 0, highest: 0, steps: HashMap::new(), reads: 0, updates: 0 };
    let mut path = Vec::new();
    for start in 1..=limit {
        path.clear();
        let mut n = start;
        let mut peak = 0;
        loop {
            r.reads += 1;
            if r.steps.contains_key(&n) || n == 1 {
                break;
            }
            path.push(n);
            n = next_term(n)?;
            peak = peak.max(n);
        }
        if path.is_empty() {
            continue;
        }
        let tail = if n == 1 {
            0
        } else {
            r.reads += 1;
            r.steps[&n]
        };
        let total = path.len() as u64 + tail;
        r.reads += 2;
        if total > r.longest {
            r.longest = total;
            r.updates += 1;
        }
        if peak > r.highest {
            r.highest = peak;
            r.updates += 1;
        }
        for (i, &k) in path.iter().enumerate() {
            r.steps.insert(k, total - i as u64);
        }
        r.updates += path.len() as u64;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_limits() {
        let r = oracle(1).unwrap();
        assert_eq!((r.longest, r.highest, r.reads, r.updates), (0, 0, 1, 0));
        assert!(r.steps.is_empty());

        let r = oracle(2).unwrap();
        assert_eq!((r.longest, r.highest, r.reads, r.updates), (1, 1, 5, 3));
        assert_eq!(r.steps, HashMap::from([(2, 1)]));

        // 3 walks 3 10 5 16 8 4 2, then stops on the stored 2
        let r = oracle(3).unwrap();
        assert_eq!((r.longest, r.highest, r.reads, r.updates), (7, 16, 15, 11));
    }

    #[test]
    fn ten() {
        let r = oracle(10).unwrap();
        assert_eq!((r.longest, r.highest), (19, 52));
        assert_eq!(r.steps[&9], 19);
        assert_eq!(r.steps[&7], 16);
    }
}

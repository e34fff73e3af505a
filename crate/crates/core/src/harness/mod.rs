//! The benchmark: split `1..=limit` into blocks, let workers claim and
//! compute them concurrently, then report the records and the metered
//! access totals.

mod blocks;
mod config;
mod events;
mod oracle;
mod report;
mod workers;

pub use blocks::{make_blocks, BlockSpec};
pub use config::{
    default_workers, Backend, BenchConfig, Coordination, Target, Workload, DEFAULT_BLOCK_SIZE, DEFAULT_LIMIT,
    DEFAULT_POLL_INTERVAL,
};
pub use events::{Event, EventKind, EventLog, PollPhase};
pub use oracle::{oracle, OracleResult};
pub use report::{BenchReport, OutputFormat, CSV_HEADER};
pub use workers::{next_block, prepare_namespace, ControlNodes, NAMESPACE};

use crate::collatz::{next_term, SequenceNodes};
use crate::error::Result;
use crate::store::{NodeHandle, Store};
use workers::{manage_workers, RunControl};

/// Runs one benchmark against `target`.
pub fn run_bench(config: &BenchConfig, target: &Target, log: Option<&EventLog>) -> Result<BenchReport> {
    config.validate()?;
    let blocks = make_blocks(config.limit, config.block_size)?;
    let mut store = target.open()?;
    prepare_namespace(&mut *store, config.force_flush)?;
    let ctl = RunControl::new(config, log)?;
    let elapsed = manage_workers(&mut *store, target, &blocks, &ctl)?;
    let s = &mut *store;
    Ok(BenchReport {
        backend: config.backend,
        coordination: config.coordination,
        workers: config.workers,
        limit: config.limit,
        block_size: config.block_size,
        longest: NodeHandle::root(SequenceNodes::LONGEST)?.get_u64_or(s, 0)?,
        highest: NodeHandle::root(SequenceNodes::HIGHEST)?.get_u64_or(s, 0)?,
        reads: ctl.nodes.reads.get_u64_or(s, 0)?,
        updates: ctl.nodes.updates.get_u64_or(s, 0)?,
        elapsed_s: elapsed.as_secs_f64(),
    })
}

/// A problem found by [`verify`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mismatch {
    Longest { expected: u64, actual: u64 },
    Highest { expected: u64, actual: u64 },
    /// `step(key)` holds something other than a step count.
    Malformed { key: String, value: String },
    /// Replaying `value` steps from `key` does not land on 1 exactly then.
    Unsound { key: u64, value: u64 },
    /// A term the oracle visits has no stored step count.
    Missing { key: u64 },
    /// A stored term that no start up to the limit visits.
    Unexpected { key: u64 },
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mismatch::Longest { expected, actual } => write!(f, "longest: expected {expected}, got {actual}"),
            Mismatch::Highest { expected, actual } => write!(f, "highest: expected {expected}, got {actual}"),
            Mismatch::Malformed { key, value } => write!(f, "step({key}): malformed value {value:?}"),
            Mismatch::Unsound { key, value } => {
                write!(f, "step({key}) = {value}: replay does not reach 1 in exactly that many steps")
            }
            Mismatch::Missing { key } => write!(f, "step({key}): missing"),
            Mismatch::Unexpected { key } => write!(f, "step({key}): not on any trajectory up to the limit"),
        }
    }
}

/// True iff `steps` applications of the 3n+1 map take `key` to 1 and no
/// earlier application does.
pub fn replays_to_one(key: u64, steps: u64) -> bool {
    let mut n = key;
    for _ in 0..steps {
        if n == 1 {
            return false;
        }
        match next_term(n) {
            Ok(m) => n = m,
            Err(_) => return false,
        }
    }
    n == 1
}

/// Checks a finished run: records against the oracle and every stored step
/// count against a replay and the oracle's table.
pub fn verify<S: Store + ?Sized>(report: &BenchReport, store: &mut S) -> Result<Vec<Mismatch>> {
    let expected = oracle(report.limit)?;
    let mut out = Vec::new();
    if report.longest != expected.longest {
        out.push(Mismatch::Longest { expected: expected.longest, actual: report.longest });
    }
    if report.highest != expected.highest {
        out.push(Mismatch::Highest { expected: expected.highest, actual: report.highest });
    }
    let mut seen = std::collections::HashSet::with_capacity(expected.steps.len());
    for (k, v) in store.children(&NodeHandle::root(SequenceNodes::STEP)?)? {
        let parsed = std::str::from_utf8(&k)
            .ok()
            .and_then(|k| k.parse::<u64>().ok())
            .zip(std::str::from_utf8(&v).ok().and_then(|v| v.parse::<u64>().ok()));
        let Some((key, value)) = parsed else {
            out.push(Mismatch::Malformed {
                key: String::from_utf8_lossy(&k).into_owned(),
                value: String::from_utf8_lossy(&v).into_owned(),
            });
            continue;
        };
        if !replays_to_one(key, value) {
            out.push(Mismatch::Unsound { key, value });
        }
        if !expected.steps.contains_key(&key) {
            out.push(Mismatch::Unexpected { key });
        }
        seen.insert(key);
    }
    let mut missing: Vec<u64> = expected.steps.keys().filter(|k| !seen.contains(k)).copied().collect();
    missing.sort_unstable();
    out.extend(missing.into_iter().map(|key| Mismatch::Missing { key }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedded::EmbeddedStore;
    use std::time::Duration;

    fn quick(backend: Backend, workers: usize, limit: u64) -> BenchConfig {
        let mut c = BenchConfig::new(backend);
        c.workers = workers;
        c.limit = limit;
        c.block_size = 10;
        c.poll_interval = Duration::from_millis(1);
        c
    }

    #[test]
    fn replay() {
        assert!(replays_to_one(2, 1));
        assert!(replays_to_one(9, 19));
        assert!(!replays_to_one(9, 18));
        assert!(!replays_to_one(2, 4));
        assert!(replays_to_one(1, 0));
    }

    #[test]
    fn embedded_run_matches_oracle() {
        for coordination in [Coordination::Locks, Coordination::Polling] {
            let mut cfg = quick(Backend::Embedded, 3, 100);
            cfg.coordination = coordination;
            let target = Target::for_config(&cfg);
            let report = run_bench(&cfg, &target, None).unwrap();
            let o = oracle(100).unwrap();
            assert_eq!((report.longest, report.highest), (o.longest, o.highest));
            assert!(report.elapsed_s > 0.0);
            let mut s = target.open().unwrap();
            assert_eq!(verify(&report, &mut *s).unwrap(), vec![]);
        }
    }

    #[test]
    fn rerun_needs_force_flush() {
        let cfg = quick(Backend::Embedded, 1, 10);
        let target = Target::Embedded(EmbeddedStore::new());
        run_bench(&cfg, &target, None).unwrap();
        assert!(matches!(run_bench(&cfg, &target, None), Err(crate::Error::NamespaceInUse(_))));
        let mut forced = cfg.clone();
        forced.force_flush = true;
        let r = run_bench(&forced, &target, None).unwrap();
        let o = oracle(10).unwrap();
        assert_eq!((r.reads, r.updates), (o.reads, o.updates));
    }

    #[test]
    fn verify_flags_corruption() {
        let cfg = quick(Backend::Embedded, 2, 30);
        let target = Target::for_config(&cfg);
        let report = run_bench(&cfg, &target, None).unwrap();
        let mut s = target.open().unwrap();
        NodeHandle::new("step", [9]).unwrap().set(&mut *s, "18").unwrap();
        NodeHandle::new("step", [1]).unwrap().set(&mut *s, "0").unwrap();
        let problems = verify(&report, &mut *s).unwrap();
        assert_eq!(problems, vec![Mismatch::Unexpected { key: 1 }, Mismatch::Unsound { key: 9, value: 18 }]);
    }
}

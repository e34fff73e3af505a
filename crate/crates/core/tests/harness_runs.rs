mod common;

use std::time::Duration;

use collatz_kv::harness::{
    default_workers, oracle, run_bench, verify, Coordination, EventKind, EventLog, PollPhase, Workload,
};
use collatz_kv::store::NodeHandle;
use collatz_kv::Error;
use common::{brute_force, Fixture};

fn claims(log: &EventLog) -> Vec<(usize, u64, u64, u64)> {
    log.events()
        .into_iter()
        .filter_map(|e| match e.kind {
            EventKind::Claim { block, first, last } => Some((e.worker.unwrap(), block, first, last)),
            _ => None,
        })
        .collect()
}

fn coordinations(fx: &Fixture) -> Vec<Coordination> {
    match fx.name {
        "embedded" => vec![Coordination::Locks, Coordination::Polling],
        _ => vec![Coordination::Polling],
    }
}

#[test]
fn claims_partition_the_starts() {
    for fx in Fixture::both() {
        for co in coordinations(&fx) {
            for workers in [1, 2, 4] {
                for _ in 0..5 {
                    let mut cfg = fx.config(workers, 205, 10);
                    cfg.coordination = co;
                    let log = EventLog::new();
                    run_bench(&cfg, &fx.target, Some(&log)).unwrap();
                    let mut covered: Vec<u64> = Vec::new();
                    let mut blocks: Vec<u64> = Vec::new();
                    for (_, block, first, last) in claims(&log) {
                        blocks.push(block);
                        covered.extend(first..=last);
                    }
                    blocks.sort_unstable();
                    covered.sort_unstable();
                    assert_eq!(blocks, (1..=21).collect::<Vec<_>>(), "{} {co} w={workers}", fx.name);
                    assert_eq!(covered, (1..=205).collect::<Vec<_>>(), "{} {co} w={workers}", fx.name);
                }
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_configuration() {
    let expected = brute_force(3000);
    for fx in Fixture::both() {
        for co in coordinations(&fx) {
            for workers in [1, 2, default_workers()] {
                for _ in 0..3 {
                    let mut cfg = fx.config(workers, 3000, 100);
                    cfg.coordination = co;
                    let r = run_bench(&cfg, &fx.target, None).unwrap();
                    assert_eq!((r.longest, r.highest), expected, "{} {co} w={workers}", fx.name);
                    assert_eq!(verify(&r, &mut *fx.open()).unwrap(), vec![]);
                }
            }
        }
    }
}

#[test]
fn noop_workload_meters_nothing() {
    for fx in Fixture::both() {
        for co in coordinations(&fx) {
            let mut cfg = fx.config(3, 100, 10);
            cfg.coordination = co;
            cfg.workload = Workload::Noop;
            let log = EventLog::new();
            let r = run_bench(&cfg, &fx.target, Some(&log)).unwrap();
            assert_eq!((r.reads, r.updates), (0, 0), "{} {co}", fx.name);
            assert_eq!(claims(&log).len(), 10);
        }
    }
}

#[test]
fn shared_totals_are_the_sum_of_worker_totals() {
    for fx in Fixture::both() {
        let cfg = fx.config(4, 2000, 50);
        let log = EventLog::new();
        let r = run_bench(&cfg, &fx.target, Some(&log)).unwrap();
        let (mut reads, mut updates, mut done) = (0, 0, 0);
        for e in log.events() {
            if let EventKind::WorkerDone { reads: a, updates: b } = e.kind {
                reads += a;
                updates += b;
                done += 1;
            }
        }
        assert_eq!(done, 4);
        assert_eq!((r.reads, r.updates), (reads, updates), "{}", fx.name);
        let mut s = fx.open();
        assert_eq!(NodeHandle::root("queued").unwrap().get(&mut *s).unwrap().unwrap(), b"0");
    }
}

#[test]
fn single_worker_counts_match_the_oracle() {
    let o = oracle(10).unwrap();
    for fx in Fixture::both() {
        for _ in 0..5 {
            let r = run_bench(&fx.config(1, 10, 10), &fx.target, None).unwrap();
            assert_eq!((r.longest, r.highest), (19, 52));
            assert_eq!((r.reads, r.updates), (o.reads, o.updates), "{}", fx.name);
        }
    }
}

#[test]
fn lock_coordination_never_polls_after_release() {
    let fx = Fixture::embedded();
    let cfg = fx.config(4, 5000, 100);
    let log = EventLog::new();
    run_bench(&cfg, &fx.target, Some(&log)).unwrap();
    let events = log.events();
    let released = events.iter().position(|e| e.kind == EventKind::BarrierReleased).unwrap();
    assert!(events[released..].iter().all(|e| !matches!(e.kind, EventKind::Poll { .. })));
    assert!(events[released..].iter().any(|e| matches!(e.kind, EventKind::RunFinished { .. })));
}

#[test]
fn polling_parent_notices_completion_within_an_interval() {
    for fx in Fixture::both() {
        let mut cfg = fx.config(2, 3000, 100);
        cfg.coordination = Coordination::Polling;
        cfg.poll_interval = Duration::from_millis(100);
        let log = EventLog::new();
        run_bench(&cfg, &fx.target, Some(&log)).unwrap();
        let events = log.events();
        let last_done =
            events.iter().filter(|e| matches!(e.kind, EventKind::WorkerDone { .. })).map(|e| e.t_s).fold(0.0, f64::max);
        let finished = events.iter().find(|e| matches!(e.kind, EventKind::RunFinished { .. })).unwrap().t_s;
        // one interval plus scheduling slack
        assert!(finished - last_done <= 0.1 + 0.05, "{}: {:.3}s", fx.name, finished - last_done);
        assert!(events.iter().any(|e| e.kind == EventKind::Poll { phase: PollPhase::Trigger }));
    }
}

/// Breaks block 1's lower boundary while the workers wait at the barrier.
fn sabotage_block_one(fx: &Fixture) {
    let mut s = fx.open();
    let queued = NodeHandle::root("queued").unwrap();
    while queued.get(&mut *s).unwrap().is_none() {
        std::thread::sleep(Duration::from_micros(200));
    }
    NodeHandle::new("blocks", [1]).unwrap().set(&mut *s, "bogus").unwrap();
}

#[test]
fn worker_failure_aborts_the_run() {
    for fx in Fixture::both() {
        for co in coordinations(&fx) {
            let mut cfg = fx.config(3, 100, 10);
            cfg.coordination = co;
            cfg.poll_interval = Duration::from_millis(300);
            let result = std::thread::scope(|sc| {
                sc.spawn(|| sabotage_block_one(&fx));
                run_bench(&cfg, &fx.target, None)
            });
            match result {
                Err(Error::WorkerFailed { message, .. }) => assert!(message.contains("blocks"), "{message}"),
                other => panic!("{} {co}: expected a worker failure, got {other:?}", fx.name),
            }
        }
    }
}

#[test]
fn rerun_without_flush_is_refused() {
    for fx in Fixture::both() {
        let mut cfg = fx.config(1, 10, 10);
        run_bench(&cfg, &fx.target, None).unwrap();
        cfg.force_flush = false;
        assert!(matches!(run_bench(&cfg, &fx.target, None), Err(Error::NamespaceInUse(_))), "{}", fx.name);
    }
}

#[test]
fn locks_on_resp_are_a_config_error() {
    let fx = Fixture::resp();
    let mut cfg = fx.config(1, 10, 10);
    cfg.coordination = Coordination::Locks;
    assert!(matches!(run_bench(&cfg, &fx.target, None), Err(Error::Config(_))));
}

//! Block claiming, the worker routine and the parent that runs them.
//!
//! Workers share nothing but the store (and, on the embedded backend, its
//! lock table). Coordination nodes are plain handles, so none of that
//! traffic reaches the per-worker access counters.

use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::config::{BenchConfig, Coordination, Target, Workload};
use super::events::{record, EventKind, EventLog, PollPhase};
use super::BlockSpec;
use crate::collatz::{sequence, SequenceNodes};
use crate::error::{Error, Result};
use crate::store::{parse_u64, AccessCounters, NodeHandle, Store};

/// Every top-level name a run reads or writes.
pub const NAMESPACE: [&str; 10] =
    ["step", "longest", "highest", "blocks", "trigger", "queued", "worker", "finished", "reads", "updates"];

/// Handles to the coordination nodes.
#[derive(Debug, Clone)]
pub struct ControlNodes {
    pub blocks: NodeHandle,
    pub trigger: NodeHandle,
    pub queued: NodeHandle,
    pub worker: NodeHandle,
    pub finished: NodeHandle,
    pub reads: NodeHandle,
    pub updates: NodeHandle,
}

impl ControlNodes {
    pub fn new() -> Result<Self> {
        Ok(ControlNodes {
            blocks: NodeHandle::root("blocks")?,
            trigger: NodeHandle::root("trigger")?,
            queued: NodeHandle::root("queued")?,
            worker: NodeHandle::root("worker")?,
            finished: NodeHandle::root("finished")?,
            reads: NodeHandle::root("reads")?,
            updates: NodeHandle::root("updates")?,
        })
    }
}

/// State the parent and its workers share outside the store: cancellation
/// and failure reporting only.
pub(crate) struct RunControl<'a> {
    pub config: &'a BenchConfig,
    pub nodes: ControlNodes,
    pub log: Option<&'a EventLog>,
    abort: AtomicBool,
    failure: Mutex<Option<(usize, String)>>,
}

impl<'a> RunControl<'a> {
    pub fn new(config: &'a BenchConfig, log: Option<&'a EventLog>) -> Result<Self> {
        Ok(RunControl { config, nodes: ControlNodes::new()?, log, abort: AtomicBool::new(false), failure: Mutex::new(None) })
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::Acquire)
    }

    fn check_abort(&self) -> Result<()> {
        if self.aborted() {
            return Err(Error::InvalidState("run aborted"));
        }
        Ok(())
    }

    fn fail(&self, worker: usize, message: String) {
        record(self.log, Some(worker), || EventKind::WorkerFailed { message: message.clone() });
        self.failure.lock().get_or_insert((worker, message));
        self.abort.store(true, Ordering::Release);
    }

    fn failure(&self) -> Option<Error> {
        self.failure
            .lock()
            .as_ref()
            .map(|(worker, message)| Error::WorkerFailed { worker: *worker, message: message.clone() })
    }

    fn check_failure(&self) -> Result<()> {
        self.failure().map_or(Ok(()), Err)
    }
}

/// Claims and computes blocks until none remain unclaimed.
///
/// Scans from block 1 on every call; a block is this worker's iff its
/// `taken` counter increments to exactly 1.
pub fn next_block<S: Store + ?Sized>(
    store: &mut S,
    seq: &SequenceNodes,
    workload: Workload,
    worker: usize,
    log: Option<&EventLog>,
) -> Result<()> {
    next_block_inner(store, seq, workload, worker, log, &|| Ok(()))
}

fn next_block_inner<S: Store + ?Sized>(
    store: &mut S,
    seq: &SequenceNodes,
    workload: Workload,
    worker: usize,
    log: Option<&EventLog>,
    check: &dyn Fn() -> Result<()>,
) -> Result<()> {
    let blocks = NodeHandle::root("blocks")?;
    let mut index = 1u64;
    while let Some(upper) = blocks.child(index + 1)?.get(store)? {
        check()?;
        let lower = blocks.child(index)?;
        if lower.child("taken")?.incr(store, 1)? == 1 {
            let first = match lower.get(store)? {
                Some(v) => parse_u64(&v, &lower)? + 1,
                None => return Err(Error::InvalidState("block boundary missing")),
            };
            let last = parse_u64(&upper, &blocks.child(index + 1)?)?;
            record(log, Some(worker), || EventKind::Claim { block: index, first, last });
            if workload == Workload::Collatz {
                for n in first..=last {
                    let walk = sequence(n, seq, store)?;
                    if walk.txn_attempts > 1 {
                        record(log, Some(worker), || EventKind::Retry { start: n, attempts: walk.txn_attempts });
                    }
                }
            }
        }
        index += 1;
    }
    Ok(())
}

/// One worker: register, wait for the start barrier, compute, publish
/// counters, deregister.
pub(crate) fn subprocess(id: usize, store: &mut dyn Store, ctl: &RunControl<'_>) -> Result<()> {
    let n = &ctl.nodes;
    let cfg = ctl.config;
    let me = id.to_string();
    let finished = n.finished.child(&me)?;
    match cfg.coordination {
        Coordination::Locks => {
            finished.grab(store, None)?;
            n.queued.incr(store, -1)?;
            record(ctl.log, Some(id), || EventKind::WorkerReady);
            let gate = n.trigger.child(&me)?;
            gate.grab(store, None)?;
            gate.release(store)?;
        }
        Coordination::Polling => {
            n.worker.child(&me)?.set(store, "1")?;
            n.queued.incr(store, -1)?;
            record(ctl.log, Some(id), || EventKind::WorkerReady);
            while n.trigger.get(store)?.as_deref() != Some(b"1") {
                ctl.check_abort()?;
                record(ctl.log, Some(id), || EventKind::Poll { phase: PollPhase::Trigger });
                thread::sleep(cfg.poll_interval);
            }
        }
    }
    ctl.check_abort()?;

    let counters = AccessCounters::new();
    let seq = SequenceNodes::new(&counters)?;
    next_block_inner(store, &seq, cfg.workload, id, ctl.log, &|| ctl.check_abort())?;

    let totals = counters.snapshot();
    n.reads.incr(store, totals.reads as i64)?;
    n.updates.incr(store, totals.updates as i64)?;
    record(ctl.log, Some(id), || EventKind::WorkerDone { reads: totals.reads, updates: totals.updates });
    match cfg.coordination {
        Coordination::Locks => finished.release(store)?,
        Coordination::Polling => n.worker.child(&me)?.delete_tree(store)?,
    }
    Ok(())
}

/// Refuses to run over leftover benchmark keys unless `force_flush` is set,
/// in which case they are removed.
pub fn prepare_namespace<S: Store + ?Sized>(store: &mut S, force_flush: bool) -> Result<()> {
    for name in NAMESPACE {
        let node = NodeHandle::root(name)?;
        if store.exists(&node)? {
            if !force_flush {
                return Err(Error::NamespaceInUse(name.to_string()));
            }
            node.delete_tree(store)?;
        }
    }
    Ok(())
}

fn wait_queued(store: &mut dyn Store, ctl: &RunControl<'_>) -> Result<()> {
    loop {
        ctl.check_failure()?;
        if ctl.nodes.queued.get(store)?.as_deref() == Some(b"0") {
            return Ok(());
        }
        record(ctl.log, None, || EventKind::Poll { phase: PollPhase::Queued });
        thread::sleep(ctl.config.poll_interval);
    }
}

/// Parent side of a timed run from stored blocks to last worker finished.
fn coordinate(store: &mut dyn Store, ctl: &RunControl<'_>, barrier_held: &mut bool) -> Result<Duration> {
    let n = &ctl.nodes;
    wait_queued(store, ctl)?;
    match ctl.config.coordination {
        Coordination::Locks => {
            n.trigger.release(store)?;
            *barrier_held = false;
        }
        Coordination::Polling => n.trigger.set(store, "1")?,
    }
    let start = Instant::now();
    record(ctl.log, None, || EventKind::BarrierReleased);
    match ctl.config.coordination {
        Coordination::Locks => {
            n.finished.grab(store, None)?;
            n.finished.release(store)?;
        }
        Coordination::Polling => loop {
            ctl.check_failure()?;
            if n.worker.subtree_size(store)? == 0 {
                break;
            }
            record(ctl.log, None, || EventKind::Poll { phase: PollPhase::Workers });
            thread::sleep(ctl.config.poll_interval);
        },
    }
    let elapsed = start.elapsed();
    ctl.check_failure()?;
    record(ctl.log, None, || EventKind::RunFinished { elapsed_s: elapsed.as_secs_f64() });
    Ok(elapsed)
}

/// Stores the blocks, starts the workers behind a barrier and waits for
/// them. Returns the time from barrier release to the last worker finishing.
pub(crate) fn manage_workers(
    store: &mut dyn Store,
    target: &Target,
    blocks: &BlockSpec,
    ctl: &RunControl<'_>,
) -> Result<Duration> {
    let n = &ctl.nodes;
    let cfg = ctl.config;
    n.blocks.set_tree(store, blocks.boundaries().iter().enumerate().map(|(i, b)| (i + 1, b.to_string())))?;
    let mut barrier_held = false;
    match cfg.coordination {
        Coordination::Locks => {
            n.trigger.grab(store, None)?;
            barrier_held = true;
        }
        Coordination::Polling => n.trigger.set(store, "0")?,
    }
    n.queued.set(store, cfg.workers.to_string())?;
    n.worker.delete_tree(store)?;
    record(ctl.log, None, || EventKind::BarrierArmed);

    thread::scope(|scope| {
        for id in 1..=cfg.workers {
            scope.spawn(move || {
                let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
                    let mut own = target.open()?;
                    subprocess(id, &mut *own, ctl)
                }));
                let message = match outcome {
                    Ok(Ok(())) => return,
                    Ok(Err(e)) => e.to_string(),
                    Err(p) => p
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| p.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "worker panicked".into()),
                };
                ctl.fail(id, message);
            });
        }
        let result = coordinate(store, ctl, &mut barrier_held);
        if result.is_err() {
            ctl.abort.store(true, Ordering::Release);
            if barrier_held {
                // let blocked workers through so they can observe the abort
                let _ = n.trigger.release(store);
            }
        }
        result
    })
}

//! Run event log, written as JSON lines.

use std::io::{self, Write};
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollPhase {
    /// Parent waiting for every worker to register.
    Queued,
    /// Worker waiting for the start flag.
    Trigger,
    /// Parent waiting for every worker to deregister.
    Workers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    BarrierArmed,
    WorkerReady,
    BarrierReleased,
    Claim { block: u64, first: u64, last: u64 },
    Poll { phase: PollPhase },
    Retry { start: u64, attempts: u32 },
    WorkerDone { reads: u64, updates: u64 },
    WorkerFailed { message: String },
    RunFinished { elapsed_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds since the log was created.
    pub t_s: f64,
    /// Worker id, absent for parent events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug)]
pub struct EventLog {
    origin: Instant,
    events: Mutex<Vec<Event>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        EventLog { origin: Instant::now(), events: Mutex::new(Vec::new()) }
    }

    pub fn record(&self, worker: Option<usize>, kind: EventKind) {
        let t_s = self.origin.elapsed().as_secs_f64();
        self.events.lock().push(Event { t_s, worker, kind });
    }

    /// Events in recording order.
    pub fn events(&self) -> Vec<Event> {
        self.events.lock().clone()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for e in self.events.lock().iter() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// Optional log; recording into `None` is a no-op.
pub(crate) fn record(log: Option<&EventLog>, worker: Option<usize>, kind: impl FnOnce() -> EventKind) {
    if let Some(log) = log {
        log.record(worker, kind());
    }
}

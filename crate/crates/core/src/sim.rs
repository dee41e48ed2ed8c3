//! Deterministic discrete-event engine.
//!
//! Virtual time is kept in integer microseconds so that ordering is exact and
//! every timestamp prints losslessly with six decimals. Events are ordered by
//! `(fire_time, sequence_no)`; the sequence number is the insertion order, so
//! simultaneous events fire in the order they were scheduled.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the generator behind every [`RngStream`], recorded in report headers.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3, per-stream id)";

pub const MICROS_PER_SEC: u64 = 1_000_000;

/// A point on the virtual clock, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Rounds to the nearest microsecond. Negative inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> SimTime {
        if secs <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime((secs * MICROS_PER_SEC as f64).round() as u64)
    }

    pub fn from_micros(us: u64) -> SimTime {
        SimTime(us)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn saturating_add(self, us: u64) -> SimTime {
        SimTime(self.0.saturating_add(us))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / MICROS_PER_SEC, self.0 % MICROS_PER_SEC)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PacketArrival,
    FrameBoundary,
    MobilityStep,
    LossNotification,
    RecoveryTick,
    SimEnd,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::PacketArrival,
        EventKind::FrameBoundary,
        EventKind::MobilityStep,
        EventKind::LossNotification,
        EventKind::RecoveryTick,
        EventKind::SimEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::PacketArrival => "packet-arrival",
            EventKind::FrameBoundary => "frame-boundary",
            EventKind::MobilityStep => "mobility-step",
            EventKind::LossNotification => "loss-notification",
            EventKind::RecoveryTick => "recovery-tick",
            EventKind::SimEnd => "sim-end",
        }
    }
}

/// Payloads carried by the queue report their kind tag.
pub trait Payload {
    fn kind(&self) -> EventKind;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub fire_time: SimTime,
    pub sequence_no: u64,
    pub payload: P,
}

impl<P: Payload> SimEvent<P> {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("event scheduled in the past: fire_time {fire_time} < now {now}")]
    InPast { fire_time: SimTime, now: SimTime },
    #[error("run_until target {target} is before the clock {now}")]
    RunBackwards { target: SimTime, now: SimTime },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub processed: u64,
    pub pending: usize,
    pub processed_by_kind: Vec<(EventKind, u64)>,
}

impl RunSummary {
    pub fn processed_of(&self, kind: EventKind) -> u64 {
        self.processed_by_kind.iter().find(|(k, _)| *k == kind).map_or(0, |(_, n)| *n)
    }
}

/// One line of the processed-event log: `(fire_time, sequence_no, kind)`.
pub type LogEntry = (SimTime, u64, EventKind);

/// Time-ordered event queue plus the virtual clock.
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    payloads: HashMap<u64, P>,
    cancelled: HashSet<u64>,
    processed: HashMap<EventKind, u64>,
    total_processed: u64,
    log: Option<Vec<LogEntry>>,
}

impl<P: Payload> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: Payload> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            payloads: HashMap::new(),
            cancelled: HashSet::new(),
            processed: HashMap::new(),
            total_processed: 0,
            log: None,
        }
    }

    /// Keep a log of every processed event.
    pub fn with_event_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of live (not cancelled) events in the queue.
    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn event_log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    pub fn schedule(&mut self, fire_time: SimTime, payload: P) -> Result<EventHandle, ScheduleError> {
        if fire_time < self.now {
            return Err(ScheduleError::InPast { fire_time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((fire_time, seq)));
        self.payloads.insert(seq, payload);
        Ok(EventHandle(seq))
    }

    /// Cancel a pending event. Returns false when it already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.payloads.remove(&handle.0).is_some() {
            self.cancelled.insert(handle.0);
            true
        } else {
            false
        }
    }

    /// Pop the next live event at or before `limit`, advancing the clock to it.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<SimEvent<P>> {
        while let Some(Reverse((t, seq))) = self.heap.peek().copied() {
            if t > limit {
                return None;
            }
            self.heap.pop();
            if self.cancelled.remove(&seq) {
                continue;
            }
            let payload = self.payloads.remove(&seq).expect("queued event has a payload");
            self.now = t;
            let kind = payload.kind();
            *self.processed.entry(kind).or_insert(0) += 1;
            self.total_processed += 1;
            if let Some(log) = self.log.as_mut() {
                log.push((t, seq, kind));
            }
            return Some(SimEvent { fire_time: t, sequence_no: seq, payload });
        }
        None
    }

    /// Process every event with `fire_time <= t_end` through `handler`, then
    /// park the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<RunSummary, ScheduleError>
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        if t_end < self.now {
            return Err(ScheduleError::RunBackwards { target: t_end, now: self.now });
        }
        let before = self.total_processed;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
        }
        self.now = t_end;
        Ok(RunSummary {
            processed: self.total_processed - before,
            pending: self.len(),
            processed_by_kind: self.processed_by_kind(),
        })
    }

    /// Cumulative processed counts in [`EventKind::ALL`] order.
    pub fn processed_by_kind(&self) -> Vec<(EventKind, u64)> {
        EventKind::ALL.iter().map(|k| (*k, self.processed.get(k).copied().unwrap_or(0))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamId {
    Mobility,
    Channel,
    Traffic,
}

impl StreamId {
    fn chacha_stream(self) -> u64 {
        match self {
            StreamId::Mobility => 0,
            StreamId::Channel => 1,
            StreamId::Traffic => 2,
        }
    }
}

/// A named, independently seeded random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.chacha_stream());
        RngStream { id, seed, draws: 0, rng }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    /// Next variate in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.gen::<f64>()
    }
}

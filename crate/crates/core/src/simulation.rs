//! One cell: subscriber stations moving on the grid, each sending a CBR flow
//! through a best-effort uplink connection to a base station, optionally under
//! QoE rate control.

use thiserror::Error;

use crate::mac::{
    channel_deliver, BeScheduler, CbrSource, Connection, Delivery, DropReason, EnqueueOutcome, Frame, LossNotification,
    MacError, Packet, SsQueue,
};
use crate::metrics::{TraceKind, TraceRecord};
use crate::mobility::{MobilityError, MobilityModel, MobilityTrace, TurnCounts};
use crate::qoe::{attach, RateState};
use crate::scenario::{RunMode, ScenarioConfig};
use crate::sim::{
    EventHandle, EventKind, LogEntry, Payload, RngStream, RunSummary, ScheduleError, Scheduler, SimTime, StreamId,
};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid scenario: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
enum Ev {
    Arrival(usize),
    Frame(u64),
    Mobility(u64),
    Loss(LossNotification),
    Recovery(usize),
    End,
}

impl Payload for Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::Arrival(_) => EventKind::PacketArrival,
            Ev::Frame(_) => EventKind::FrameBoundary,
            Ev::Mobility(_) => EventKind::MobilityStep,
            Ev::Loss(_) => EventKind::LossNotification,
            Ev::Recovery(_) => EventKind::RecoveryTick,
            Ev::End => EventKind::SimEnd,
        }
    }
}

/// Counters kept by the simulation itself, independent of the trace, so the
/// two can be cross-checked.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub created: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// queued or in flight at the end
    pub residual: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: RunMode,
    pub records: Vec<TraceRecord>,
    pub summary: RunSummary,
    pub counters: Vec<FlowCounters>,
    pub notifications_emitted: u64,
    pub notifications_processed: u64,
    pub trajectory: MobilityTrace,
    pub trajectory_digest: String,
    pub interior_turns: TurnCounts,
    pub final_rates: Vec<RateState>,
    pub event_log: Option<Vec<LogEntry>>,
}

struct Cell<'a> {
    cfg: &'a ScenarioConfig,
    mode: RunMode,
    sim_end: SimTime,
    frame_us: u64,
    dt_us: u64,
    notify_us: u64,
    mobility: MobilityModel,
    sources: Vec<CbrSource>,
    queues: Vec<SsQueue>,
    connections: Vec<Connection>,
    bs: BeScheduler,
    channel: crate::mac::ChannelModel,
    bs_pos: (f64, f64),
    rates: Vec<RateState>,
    recovery: Vec<Option<EventHandle>>,
    in_flight: Vec<Packet>,
    records: Vec<TraceRecord>,
    counters: Vec<FlowCounters>,
    notifications_emitted: u64,
    notifications_processed: u64,
    error: Option<SimulationError>,
}

pub fn mobility_model(cfg: &ScenarioConfig) -> Result<MobilityModel, MobilityError> {
    MobilityModel::new(
        cfg.grid,
        cfg.speed,
        cfg.mobility_dt_us() as f64 / 1e6,
        cfg.flows.len(),
        RngStream::new(cfg.seed, StreamId::Mobility),
    )
}

/// Step the mobility model through the whole run without any traffic. The
/// trajectory is identical to the one produced inside [`simulate`].
pub fn mobility_only(cfg: &ScenarioConfig) -> Result<MobilityModel, MobilityError> {
    let mut m = mobility_model(cfg)?;
    let dt_us = cfg.mobility_dt_us();
    let steps = cfg.sim_us() / dt_us;
    for k in 1..=steps {
        m.advance(((k - 1) * dt_us) as f64 / 1e6);
    }
    Ok(m)
}

pub fn simulate(cfg: &ScenarioConfig, mode: RunMode) -> Result<RunOutput, SimulationError> {
    simulate_with(cfg, mode, false)
}

pub fn simulate_with(cfg: &ScenarioConfig, mode: RunMode, event_log: bool) -> Result<RunOutput, SimulationError> {
    cfg.validate().map_err(|e| SimulationError::Config(e.to_string()))?;
    let connections: Vec<Connection> = cfg
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| Connection {
            cid: i,
            ss_id: i,
            service_class: f.service_class,
            traffic_priority: f.priority,
            max_sustained_rate: f.initial_rate,
        })
        .collect();
    if let Some(c) = connections.iter().find(|c| c.service_class != crate::mac::ServiceClass::Be) {
        return Err(MacError::NotBestEffort { cid: c.cid, class: c.service_class }.into());
    }
    let rates = attach(&cfg.envelopes()).map_err(|e| SimulationError::Config(e.to_string()))?;
    let n = cfg.flows.len();
    let mut cell = Cell {
        cfg,
        mode,
        sim_end: SimTime(cfg.sim_us()),
        frame_us: cfg.mac.frame_us(),
        dt_us: cfg.mobility_dt_us(),
        notify_us: cfg.mac.frame_us(),
        mobility: mobility_model(cfg)?,
        sources: cfg.flows.iter().enumerate().map(|(i, f)| CbrSource::new(i, f.packet_size, f.start_time)).collect(),
        queues: (0..n).map(|i| SsQueue::new(i, cfg.mac.queue_capacity)).collect(),
        connections,
        bs: BeScheduler::new(),
        channel: cfg.channel_model(),
        bs_pos: cfg.bs_position(),
        rates,
        recovery: vec![None; n],
        in_flight: Vec::new(),
        records: Vec::new(),
        counters: vec![FlowCounters::default(); n],
        notifications_emitted: 0,
        notifications_processed: 0,
        error: None,
    };

    let mut sched: Scheduler<Ev> = Scheduler::new();
    if event_log {
        sched = sched.with_event_log();
    }
    sched.schedule(cell.sim_end, Ev::End)?;
    for (i, src) in cell.sources.iter().enumerate() {
        if src.next_emission() < cell.sim_end {
            sched.schedule(src.next_emission(), Ev::Arrival(i))?;
        }
    }
    sched.schedule(SimTime::ZERO, Ev::Frame(0))?;
    if cell.dt_us <= cell.sim_end.0 {
        sched.schedule(SimTime(cell.dt_us), Ev::Mobility(1))?;
    }
    if mode == RunMode::Qoe {
        for (i, r) in cell.rates.iter().enumerate() {
            cell.records.push(TraceRecord::rate_change(SimTime::ZERO, i, 0, cfg.flows[i].packet_size, r.rate_current));
        }
    }

    let summary = sched.run_until(cell.sim_end, |s, ev| {
        if cell.error.is_none() {
            if let Err(e) = cell.handle(s, ev.fire_time, ev.payload) {
                cell.error = Some(e);
            }
        }
    })?;
    if let Some(e) = cell.error {
        return Err(e);
    }
    for (i, q) in cell.queues.iter().enumerate() {
        cell.counters[i].residual = q.len() as u64;
    }
    for p in &cell.in_flight {
        cell.counters[p.flow_id].residual += 1;
    }
    let trajectory = cell.mobility.trace().clone();
    let trajectory_digest = trajectory.digest()?;
    Ok(RunOutput {
        mode,
        records: cell.records,
        summary,
        counters: cell.counters,
        notifications_emitted: cell.notifications_emitted,
        notifications_processed: cell.notifications_processed,
        trajectory,
        trajectory_digest,
        interior_turns: cell.mobility.interior_turns(),
        final_rates: cell.rates,
        event_log: sched.event_log().map(|l| l.to_vec()),
    })
}

impl Cell<'_> {
    fn rate(&self, flow: usize) -> f64 {
        match self.mode {
            RunMode::Qoe => self.rates[flow].rate_current,
            RunMode::Baseline => self.cfg.flows[flow].initial_rate,
        }
    }

    fn handle(&mut self, s: &mut Scheduler<Ev>, now: SimTime, ev: Ev) -> Result<(), SimulationError> {
        match ev {
            Ev::Arrival(flow) => {
                let rate = self.rate(flow);
                let (pkt, next) = self.sources[flow].emit(now, rate);
                let (seq, size) = (pkt.seq, pkt.size);
                self.counters[flow].created += 1;
                self.records.push(TraceRecord::new(now, TraceKind::Create, flow, seq, size));
                match self.queues[flow].enqueue(pkt) {
                    EnqueueOutcome::Accepted { .. } => {
                        self.records.push(TraceRecord::new(now, TraceKind::Enqueue, flow, seq, size));
                    }
                    EnqueueOutcome::Dropped(p) => self.drop_packet(s, now, &p, DropReason::QueueOverflow)?,
                }
                if next < self.sim_end {
                    s.schedule(next, Ev::Arrival(flow))?;
                }
            }
            Ev::Frame(k) => {
                for p in std::mem::take(&mut self.in_flight) {
                    self.counters[p.flow_id].delivered += 1;
                    self.records.push(TraceRecord::new(now, TraceKind::Recv, p.flow_id, p.seq, p.size));
                }
                if now < self.sim_end {
                    let frame = Frame::nth(k, self.frame_us, self.cfg.mac.ul_capacity());
                    let grants = self.bs.schedule_frame(&self.connections, &self.queues, &frame)?;
                    for g in grants {
                        let pos = self.mobility.position(g.cid);
                        for _ in 0..g.packets {
                            let pkt = self.queues[g.cid].dequeue(now).expect("grant covers queued packets");
                            self.records.push(TraceRecord::new(now, TraceKind::Send, pkt.flow_id, pkt.seq, pkt.size));
                            match channel_deliver(&frame, pos, self.bs_pos, &self.channel) {
                                Delivery::Delivered(_) => self.in_flight.push(pkt),
                                Delivery::Dropped(reason) => self.drop_packet(s, now, &pkt, reason)?,
                            }
                        }
                    }
                    let next = frame.end();
                    if next <= self.sim_end {
                        s.schedule(next, Ev::Frame(k + 1))?;
                    }
                }
            }
            Ev::Mobility(k) => {
                self.mobility.advance(((k - 1) * self.dt_us) as f64 / 1e6);
                let next = SimTime((k + 1) * self.dt_us);
                if next <= self.sim_end {
                    s.schedule(next, Ev::Mobility(k + 1))?;
                }
            }
            Ev::Loss(note) => {
                self.notifications_processed += 1;
                if self.mode == RunMode::Qoe {
                    let flow = note.flow_id;
                    let before = self.rates[flow];
                    let after = before.on_loss(&self.cfg.qoe, &note);
                    self.rates[flow] = after;
                    if after.rate_current != before.rate_current {
                        self.log_rate(now, flow);
                    }
                    if let Some(h) = self.recovery[flow].take() {
                        s.cancel(h);
                    }
                    if !after.at_max() {
                        let at = now.saturating_add(secs_to_us(self.cfg.qoe.quiet_threshold));
                        self.recovery[flow] = Some(s.schedule(at, Ev::Recovery(flow))?);
                    }
                }
            }
            Ev::Recovery(flow) => {
                self.recovery[flow] = None;
                let before = self.rates[flow];
                let after = before.on_recovery_tick(&self.cfg.qoe, now);
                self.rates[flow] = after;
                if after.rate_current != before.rate_current {
                    self.log_rate(now, flow);
                }
                if !after.at_max() {
                    let at = now.saturating_add(secs_to_us(self.cfg.qoe.recovery_period));
                    self.recovery[flow] = Some(s.schedule(at, Ev::Recovery(flow))?);
                }
            }
            Ev::End => {}
        }
        Ok(())
    }

    fn drop_packet(
        &mut self,
        s: &mut Scheduler<Ev>,
        now: SimTime,
        pkt: &Packet,
        reason: DropReason,
    ) -> Result<(), SimulationError> {
        self.counters[pkt.flow_id].dropped += 1;
        self.records.push(TraceRecord::drop(now, pkt.flow_id, pkt.seq, pkt.size, reason));
        let note =
            LossNotification { flow_id: pkt.flow_id, seq: pkt.seq, time: now.saturating_add(self.notify_us), reason };
        self.notifications_emitted += 1;
        s.schedule(note.time, Ev::Loss(note))?;
        Ok(())
    }

    fn log_rate(&mut self, now: SimTime, flow: usize) {
        let seq = self.sources[flow].created();
        let size = self.cfg.flows[flow].packet_size;
        self.records.push(TraceRecord::rate_change(now, flow, seq, size, self.rates[flow].rate_current));
    }
}

fn secs_to_us(s: f64) -> u64 {
    SimTime::from_secs_f64(s).0
}

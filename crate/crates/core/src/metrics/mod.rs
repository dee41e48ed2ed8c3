//! Per-flow throughput, packet loss rate, delay and jitter from packet traces.
//!
//! Timestamps are integer microseconds, so every sum here is exact and the
//! only rounding happens in the final division.

pub mod compare;
pub mod trace;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimTime, MICROS_PER_SEC};

pub use compare::{compare, compare_documents, ComparisonReport, Direction, FlowComparison, MetricsDocument};
pub use trace::{TraceKind, TraceRecord};

pub const CSV_HEADER: &str =
    "flow_id,avg_throughput_Bps,plr,avg_delay_s,avg_jitter_s,created,delivered,dropped,residual";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("flow {0} has no created packets")]
    NoPackets(usize),
    #[error("flow {0} has no delivered packets")]
    NoDeliveries(usize),
    #[error("flow {flow} needs at least two deliveries for jitter (has {delivered})")]
    TooFewForJitter { flow: usize, delivered: u64 },
    #[error("measurement window end {end} is not after start {start}")]
    EmptyWindow { start: SimTime, end: SimTime },
    #[error("conservation violated for flow {flow} seq {seq}: {msg}")]
    Conservation { flow: usize, seq: u64, msg: &'static str },
    #[error("flow sets differ: baseline {baseline:?} vs qoe {qoe:?}")]
    FlowSetMismatch { baseline: Vec<usize>, qoe: Vec<usize> },
    #[error("scenario digests differ: {baseline} vs {qoe}")]
    DigestMismatch { baseline: String, qoe: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketCounts {
    pub created: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub residual: u64,
    pub dropped_queue_overflow: u64,
    pub dropped_channel_outage: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow_id: usize,
    /// bytes/s
    pub avg_throughput: f64,
    pub packet_loss_rate: f64,
    /// seconds; absent when nothing was delivered
    pub avg_delay: Option<f64>,
    /// seconds; absent with fewer than two deliveries
    pub avg_jitter: Option<f64>,
    pub counts: PacketCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: SimTime,
    pub end: SimTime,
}

fn of_flow(records: &[TraceRecord], flow: usize) -> impl Iterator<Item = &TraceRecord> {
    records.iter().filter(move |r| r.flow_id == flow)
}

/// Delivered bytes in `[t_start, t_end]` per second of window.
pub fn compute_throughput(
    records: &[TraceRecord],
    flow: usize,
    t_start: SimTime,
    t_end: SimTime,
) -> Result<f64, MetricsError> {
    if t_end <= t_start {
        return Err(MetricsError::EmptyWindow { start: t_start, end: t_end });
    }
    let bytes: u64 = of_flow(records, flow)
        .filter(|r| r.kind == TraceKind::Recv && r.time >= t_start && r.time <= t_end)
        .map(|r| r.size as u64)
        .sum();
    let secs = (t_end.0 - t_start.0) as f64 / MICROS_PER_SEC as f64;
    Ok(bytes as f64 / secs)
}

pub fn compute_plr(records: &[TraceRecord], flow: usize) -> Result<f64, MetricsError> {
    let (mut created, mut dropped) = (0u64, 0u64);
    for r in of_flow(records, flow) {
        match r.kind {
            TraceKind::Create => created += 1,
            TraceKind::Drop => dropped += 1,
            _ => {}
        }
    }
    if created == 0 {
        return Err(MetricsError::NoPackets(flow));
    }
    Ok(dropped as f64 / created as f64)
}

/// `(seq, delay_us)` for every delivered packet of `flow`, ordered by seq.
fn delivered_delays(records: &[TraceRecord], flow: usize) -> Vec<(u64, u64)> {
    let mut created: HashMap<u64, SimTime> = HashMap::new();
    let mut out = Vec::new();
    for r in of_flow(records, flow) {
        match r.kind {
            TraceKind::Create => {
                created.insert(r.seq, r.time);
            }
            TraceKind::Recv => {
                if let Some(t0) = created.get(&r.seq) {
                    out.push((r.seq, r.time.0.saturating_sub(t0.0)));
                }
            }
            _ => {}
        }
    }
    out.sort_unstable_by_key(|(seq, _)| *seq);
    out
}

pub fn compute_delay(records: &[TraceRecord], flow: usize) -> Result<f64, MetricsError> {
    let delays = delivered_delays(records, flow);
    if delays.is_empty() {
        return Err(MetricsError::NoDeliveries(flow));
    }
    let total: u128 = delays.iter().map(|(_, d)| *d as u128).sum();
    Ok(total as f64 / delays.len() as f64 / MICROS_PER_SEC as f64)
}

pub fn compute_jitter(records: &[TraceRecord], flow: usize) -> Result<f64, MetricsError> {
    let delays = delivered_delays(records, flow);
    if delays.len() < 2 {
        return Err(MetricsError::TooFewForJitter { flow, delivered: delays.len() as u64 });
    }
    let total: u128 = delays.windows(2).map(|w| w[1].1.abs_diff(w[0].1) as u128).sum();
    Ok(total as f64 / (delays.len() - 1) as f64 / MICROS_PER_SEC as f64)
}

/// Count packet fates for `flow`, rejecting traces where a packet terminates
/// twice or terminates without having been created.
pub fn packet_counts(records: &[TraceRecord], flow: usize) -> Result<PacketCounts, MetricsError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Fate {
        Open,
        Done,
    }
    let mut fate: HashMap<u64, Fate> = HashMap::new();
    let mut c = PacketCounts::default();
    for r in of_flow(records, flow) {
        match r.kind {
            TraceKind::Create => {
                if fate.insert(r.seq, Fate::Open).is_some() {
                    return Err(MetricsError::Conservation { flow, seq: r.seq, msg: "created twice" });
                }
                c.created += 1;
            }
            TraceKind::Recv | TraceKind::Drop => {
                match fate.get_mut(&r.seq) {
                    Some(f @ Fate::Open) => *f = Fate::Done,
                    Some(Fate::Done) => {
                        return Err(MetricsError::Conservation { flow, seq: r.seq, msg: "terminated twice" })
                    }
                    None => {
                        return Err(MetricsError::Conservation { flow, seq: r.seq, msg: "terminated before creation" })
                    }
                }
                if r.kind == TraceKind::Recv {
                    c.delivered += 1;
                } else {
                    c.dropped += 1;
                    match r.reason() {
                        Some(crate::mac::DropReason::QueueOverflow) => c.dropped_queue_overflow += 1,
                        Some(crate::mac::DropReason::ChannelOutage) => c.dropped_channel_outage += 1,
                        None => {}
                    }
                }
            }
            _ => {}
        }
    }
    c.residual = fate.values().filter(|f| **f == Fate::Open).count() as u64;
    if c.created != c.delivered + c.dropped + c.residual {
        return Err(MetricsError::Conservation { flow, seq: 0, msg: "created != delivered + dropped + residual" });
    }
    Ok(c)
}

/// Flows that created at least one packet, ascending.
pub fn flow_ids(records: &[TraceRecord]) -> Vec<usize> {
    records
        .iter()
        .filter(|r| r.kind == TraceKind::Create)
        .map(|r| r.flow_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn flow_metrics(records: &[TraceRecord], flow: usize, window: Window) -> Result<FlowMetrics, MetricsError> {
    let counts = packet_counts(records, flow)?;
    Ok(FlowMetrics {
        flow_id: flow,
        avg_throughput: compute_throughput(records, flow, window.start, window.end)?,
        packet_loss_rate: compute_plr(records, flow)?,
        avg_delay: compute_delay(records, flow).ok(),
        avg_jitter: compute_jitter(records, flow).ok(),
        counts,
    })
}

pub fn all_flow_metrics(records: &[TraceRecord], window: Window) -> Result<Vec<FlowMetrics>, MetricsError> {
    flow_ids(records).into_iter().map(|f| flow_metrics(records, f, window)).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(flows: &[FlowMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in flows {
        let c = &m.counts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            m.flow_id,
            m.avg_throughput,
            m.packet_loss_rate,
            opt(m.avg_delay),
            opt(m.avg_jitter),
            c.created,
            c.delivered,
            c.dropped,
            c.residual
        );
    }
    out
}

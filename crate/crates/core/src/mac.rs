//! Simplified 802.16 point-to-multipoint uplink: CBR sources, per-SS FIFO
//! queues, a frame-based round-robin Best-Effort scheduler at the BS, and a
//! distance-threshold channel.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("connection {cid} has service class {class}; only BE is schedulable")]
    NotBestEffort { cid: usize, class: ServiceClass },
    #[error("queue count {queues} does not match connection count {connections}")]
    QueueMismatch { queues: usize, connections: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ServiceClass {
    #[serde(rename = "UGS")]
    Ugs,
    #[serde(rename = "rtPS")]
    RtPs,
    #[serde(rename = "ertPS")]
    ErtPs,
    #[serde(rename = "nrtPS")]
    NrtPs,
    #[default]
    #[serde(rename = "BE")]
    Be,
}

impl fmt::Display for ServiceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServiceClass::Ugs => "UGS",
            ServiceClass::RtPs => "rtPS",
            ServiceClass::ErtPs => "ertPS",
            ServiceClass::NrtPs => "nrtPS",
            ServiceClass::Be => "BE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub cid: usize,
    pub ss_id: usize,
    pub service_class: ServiceClass,
    /// Carried for completeness; round-robin BE ignores it.
    pub traffic_priority: u8,
    /// bytes/s
    pub max_sustained_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    QueueOverflow,
    ChannelOutage,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::QueueOverflow => "queue_overflow",
            DropReason::ChannelOutage => "channel_outage",
        }
    }
}

impl FromStr for DropReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "queue_overflow" => Ok(DropReason::QueueOverflow),
            "channel_outage" => Ok(DropReason::ChannelOutage),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub flow_id: usize,
    pub seq: u64,
    pub size: u32,
    pub t_created: SimTime,
    pub t_dequeued: Option<SimTime>,
    pub t_delivered: Option<SimTime>,
    pub drop_reason: Option<DropReason>,
}

impl Packet {
    pub fn new(flow_id: usize, seq: u64, size: u32, t_created: SimTime) -> Self {
        Packet { flow_id, seq, size, t_created, t_dequeued: None, t_delivered: None, drop_reason: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub index: u64,
    pub start: SimTime,
    /// microseconds
    pub duration: u64,
    pub ul_capacity: u32,
}

impl Frame {
    pub fn nth(index: u64, duration: u64, ul_capacity: u32) -> Frame {
        Frame { index, start: SimTime(index * duration), duration, ul_capacity }
    }

    pub fn end(&self) -> SimTime {
        self.start.saturating_add(self.duration)
    }
}

/// Constant-bit-rate packet source. Emission instants accumulate exactly in
/// seconds and are rounded to the clock grid when scheduled, so the long-run
/// rate is unaffected by clock resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CbrSource {
    pub flow_id: usize,
    pub packet_size: u32,
    next_seq: u64,
    next_exact: f64,
}

impl CbrSource {
    pub fn new(flow_id: usize, packet_size: u32, start: f64) -> Self {
        CbrSource { flow_id, packet_size, next_seq: 0, next_exact: start }
    }

    pub fn interval(&self, rate: f64) -> f64 {
        self.packet_size as f64 / rate
    }

    pub fn next_emission(&self) -> SimTime {
        SimTime::from_secs_f64(self.next_exact)
    }

    pub fn created(&self) -> u64 {
        self.next_seq
    }

    /// Emit the packet due now and return the time of the following one at
    /// `rate` bytes/s.
    pub fn emit(&mut self, now: SimTime, rate: f64) -> (Packet, SimTime) {
        let pkt = Packet::new(self.flow_id, self.next_seq, self.packet_size, now);
        self.next_seq += 1;
        self.next_exact += self.interval(rate);
        (pkt, self.next_emission())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted { depth: usize },
    Dropped(Packet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsQueue {
    pub cid: usize,
    capacity: usize,
    packets: VecDeque<Packet>,
}

impl SsQueue {
    pub fn new(cid: usize, capacity: usize) -> Self {
        SsQueue { cid, capacity, packets: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    pub fn enqueue(&mut self, mut pkt: Packet) -> EnqueueOutcome {
        if self.packets.len() >= self.capacity {
            pkt.drop_reason = Some(DropReason::QueueOverflow);
            return EnqueueOutcome::Dropped(pkt);
        }
        self.packets.push_back(pkt);
        EnqueueOutcome::Accepted { depth: self.packets.len() }
    }

    pub fn dequeue(&mut self, now: SimTime) -> Option<Packet> {
        self.packets.pop_front().map(|mut p| {
            p.t_dequeued = Some(now);
            p
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub cid: usize,
    pub packets: u32,
    pub bytes: u32,
}

/// Round-robin Best-Effort uplink scheduler.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BeScheduler {
    pointer: usize,
}

impl BeScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pointer(&self) -> usize {
        self.pointer
    }

    /// Hand out whole-packet grants one packet per connection per pass,
    /// starting at the rotating pointer, until nothing else fits. The next
    /// frame starts after the last connection served.
    pub fn schedule_frame(
        &mut self,
        connections: &[Connection],
        queues: &[SsQueue],
        frame: &Frame,
    ) -> Result<Vec<Grant>, MacError> {
        if let Some(c) = connections.iter().find(|c| c.service_class != ServiceClass::Be) {
            return Err(MacError::NotBestEffort { cid: c.cid, class: c.service_class });
        }
        if queues.len() != connections.len() {
            return Err(MacError::QueueMismatch { queues: queues.len(), connections: connections.len() });
        }
        let n = queues.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut remaining = frame.ul_capacity;
        let mut taken = vec![0usize; n];
        let mut grants: Vec<Grant> = Vec::new();
        let mut last_served = None;
        let start = self.pointer % n;
        loop {
            let mut progressed = false;
            for k in 0..n {
                let i = (start + k) % n;
                let Some(head) = queues[i].packets.get(taken[i]) else { continue };
                if head.size > remaining {
                    continue;
                }
                remaining -= head.size;
                taken[i] += 1;
                progressed = true;
                last_served = Some(i);
                match grants.iter_mut().find(|g| g.cid == queues[i].cid) {
                    Some(g) => {
                        g.packets += 1;
                        g.bytes += head.size;
                    }
                    None => grants.push(Grant { cid: queues[i].cid, packets: 1, bytes: head.size }),
                }
            }
            if !progressed {
                break;
            }
        }
        if let Some(i) = last_served {
            self.pointer = (i + 1) % n;
        }
        Ok(grants)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransmitParams {
    /// watts
    pub pt: f64,
    pub gt: f64,
    pub gr: f64,
    /// antenna heights, meters
    pub ht: f64,
    pub hr: f64,
    pub system_loss: f64,
}

impl Default for TransmitParams {
    fn default() -> Self {
        TransmitParams { pt: 0.281_838_15, gt: 1.0, gr: 1.0, ht: 1.5, hr: 1.5, system_loss: 1.0 }
    }
}

/// Two-ray-ground coverage disc around the BS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub rx_power_threshold: f64,
    /// Stored only; the uplink is contention-free.
    pub cs_power_threshold: f64,
    pub frequency: f64,
    pub tx: TransmitParams,
    pub coverage_radius: f64,
}

impl ChannelModel {
    pub const CS_RATIO: f64 = 0.9;

    pub fn new(rx_power_threshold: f64, frequency: f64, tx: TransmitParams) -> Self {
        let numerator = tx.pt * tx.gt * tx.gr * tx.ht.powi(2) * tx.hr.powi(2);
        let coverage_radius = (numerator / (tx.system_loss * rx_power_threshold)).powf(0.25);
        ChannelModel {
            rx_power_threshold,
            cs_power_threshold: Self::CS_RATIO * rx_power_threshold,
            frequency,
            tx,
            coverage_radius,
        }
    }

    /// Pr(d) = Pt·Gt·Gr·ht²·hr² / (d⁴·L)
    pub fn received_power(&self, d: f64) -> f64 {
        let t = &self.tx;
        t.pt * t.gt * t.gr * t.ht.powi(2) * t.hr.powi(2) / (d.powi(4) * t.system_loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered(SimTime),
    Dropped(DropReason),
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn channel_deliver(
    frame: &Frame,
    ss_position: (f64, f64),
    bs_position: (f64, f64),
    model: &ChannelModel,
) -> Delivery {
    if distance(ss_position, bs_position) <= model.coverage_radius {
        Delivery::Delivered(frame.end())
    } else {
        Delivery::Dropped(DropReason::ChannelOutage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossNotification {
    pub flow_id: usize,
    pub seq: u64,
    pub time: SimTime,
    pub reason: DropReason,
}

/// Notification for a dropped packet, due `delay_us` after `dropped_at`.
pub fn loss_event(pkt: &Packet, dropped_at: SimTime, delay_us: u64) -> Option<LossNotification> {
    pkt.drop_reason.map(|reason| LossNotification {
        flow_id: pkt.flow_id,
        seq: pkt.seq,
        time: dropped_at.saturating_add(delay_us),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn be(cid: usize) -> Connection {
        Connection {
            cid,
            ss_id: cid,
            service_class: ServiceClass::Be,
            traffic_priority: 0,
            max_sustained_rate: 200_000.0,
        }
    }

    fn filled(cid: usize, n: u64) -> SsQueue {
        let mut q = SsQueue::new(cid, 50);
        for s in 0..n {
            q.enqueue(Packet::new(cid, s, 200, SimTime::ZERO));
        }
        q
    }

    fn per_cid(grants: &[Grant], n: usize) -> Vec<u32> {
        (0..n).map(|c| grants.iter().find(|g| g.cid == c).map_or(0, |g| g.bytes)).collect()
    }

    #[test]
    fn cbr_counts_over_200s() {
        let mut src = CbrSource::new(1, 200, 0.0);
        let end = SimTime::from_secs_f64(200.0);
        let mut t = src.next_emission();
        while t < end {
            t = src.emit(t, 200_000.0).1;
        }
        assert_eq!(src.created(), 200_000);
    }

    #[test]
    fn cbr_interval_from_rate() {
        let src = CbrSource::new(0, 200, 0.0);
        assert!((src.interval(133_333.0) - 0.0015).abs() < 1e-8);
        assert_eq!(src.interval(200_000.0), 0.001);
        assert!((src.interval(150_000.0) - 0.001_333_333_333).abs() < 1e-12);
    }

    #[test]
    fn cbr_rate_change_applies_from_next_emission() {
        let mut src = CbrSource::new(0, 200, 0.0);
        let (_, t1) = src.emit(SimTime::ZERO, 200_000.0);
        assert_eq!(t1, SimTime::from_secs_f64(0.001));
        let (_, t2) = src.emit(t1, 150_000.0);
        assert_eq!(t2, SimTime::from_secs_f64(0.001 + 200.0 / 150_000.0));
    }

    #[test]
    fn enqueue_until_full() {
        let mut q = SsQueue::new(0, 50);
        assert_eq!(q.enqueue(Packet::new(0, 0, 200, SimTime::ZERO)), EnqueueOutcome::Accepted { depth: 1 });
        for s in 1..50 {
            q.enqueue(Packet::new(0, s, 200, SimTime::ZERO));
        }
        match q.enqueue(Packet::new(0, 50, 200, SimTime::ZERO)) {
            EnqueueOutcome::Dropped(p) => assert_eq!(p.drop_reason, Some(DropReason::QueueOverflow)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sustained_overload_overflows() {
        // 250 kB/s offered; 750 B frames carry three whole 200 B packets
        // (120 kB/s), so the backlog grows ~650 packets/s and Q_max 50 is hit fast.
        let frame_us = 5_000u64;
        let capacity = 750u32; // 150 kB/s * 5 ms
        let conns = vec![be(0)];
        let mut queues = vec![SsQueue::new(0, 50)];
        let mut sched = BeScheduler::new();
        let mut src = CbrSource::new(0, 200, 0.0);
        let mut drops = 0;
        let mut next = src.next_emission();
        for k in 0..200u64 {
            let frame = Frame::nth(k, frame_us, capacity);
            while next < frame.end() {
                let (p, n) = src.emit(next, 250_000.0);
                next = n;
                if let EnqueueOutcome::Dropped(_) = queues[0].enqueue(p) {
                    drops += 1;
                }
            }
            for g in sched.schedule_frame(&conns, &queues, &frame).unwrap() {
                for _ in 0..g.packets {
                    queues[0].dequeue(frame.start);
                }
            }
        }
        assert!(drops >= 1);
    }

    #[test]
    fn equal_split() {
        let conns: Vec<_> = (0..5).map(be).collect();
        let queues: Vec<_> = (0..5).map(|c| filled(c, 3)).collect();
        let g = BeScheduler::new().schedule_frame(&conns, &queues, &Frame::nth(0, 5000, 2000)).unwrap();
        assert_eq!(per_cid(&g, 5), vec![400; 5]);
    }

    #[test]
    fn single_queue_work_conserving() {
        let conns: Vec<_> = (0..5).map(be).collect();
        let mut queues: Vec<_> = (0..5).map(|c| SsQueue::new(c, 50)).collect();
        queues[2] = filled(2, 40);
        let g = BeScheduler::new().schedule_frame(&conns, &queues, &Frame::nth(0, 5000, 7500)).unwrap();
        assert_eq!(g, vec![Grant { cid: 2, packets: 37, bytes: 7400 }]);
    }

    #[test]
    fn pointer_rotates_across_frames() {
        let conns: Vec<_> = (0..5).map(be).collect();
        let queues: Vec<_> = (0..5).map(|c| filled(c, 5)).collect();
        let mut s = BeScheduler::new();
        let f1 = s.schedule_frame(&conns, &queues, &Frame::nth(0, 5000, 1000)).unwrap();
        assert_eq!(f1.iter().map(|g| g.cid).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(s.pointer(), 0);
        let f2 = s.schedule_frame(&conns, &queues, &Frame::nth(1, 5000, 800)).unwrap();
        assert_eq!(f2.iter().map(|g| g.cid).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(s.pointer(), 4);
        let f3 = s.schedule_frame(&conns, &queues, &Frame::nth(2, 5000, 800)).unwrap();
        assert_eq!(f3.iter().map(|g| g.cid).collect::<Vec<_>>(), vec![4, 0, 1, 2]);
    }

    #[test]
    fn rejects_non_be() {
        let mut conns: Vec<_> = (0..2).map(be).collect();
        conns[1].service_class = ServiceClass::Ugs;
        let queues: Vec<_> = (0..2).map(|c| filled(c, 1)).collect();
        let err = BeScheduler::new().schedule_frame(&conns, &queues, &Frame::nth(0, 5000, 1000)).unwrap_err();
        assert_eq!(err, MacError::NotBestEffort { cid: 1, class: ServiceClass::Ugs });
    }

    #[test]
    fn cs_threshold_ratio() {
        let m = ChannelModel::new(2.025e-12, 3.486e9, TransmitParams::default());
        assert_eq!(m.cs_power_threshold, 0.9 * 2.025e-12);
        assert!(m.coverage_radius > 0.0);
    }

    #[test]
    fn delivery_threshold() {
        let m = ChannelModel::new(2.025e-12, 3.486e9, TransmitParams::default());
        let f = Frame::nth(10, 5000, 7500);
        assert_eq!(channel_deliver(&f, (0.0, 0.0), (0.0, 0.0), &m), Delivery::Delivered(SimTime(55_000)));
        let r = m.coverage_radius;
        assert_eq!(channel_deliver(&f, (r + 1.0, 0.0), (0.0, 0.0), &m), Delivery::Dropped(DropReason::ChannelOutage));
    }

    #[test]
    fn coverage_radius_matches_bisection() {
        // independent root-find on Pr(d) = threshold
        let m = ChannelModel::new(2.025e-12, 3.486e9, TransmitParams::default());
        let pr = |d: f64| 0.281_838_15 * 1.5f64.powi(2) * 1.5f64.powi(2) / d.powi(4);
        let (mut lo, mut hi) = (1.0f64, 10_000.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if pr(mid) > 2.025e-12 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((m.coverage_radius - lo).abs() < 1e-6);
        // frozen regression value
        assert!((m.coverage_radius - 916.188_734).abs() < 1e-3, "{}", m.coverage_radius);
    }

    #[test]
    fn notification_after_one_frame() {
        let mut p = Packet::new(2, 1523, 200, SimTime::from_secs_f64(3.2));
        assert_eq!(loss_event(&p, SimTime::from_secs_f64(3.2), 5_000), None);
        p.drop_reason = Some(DropReason::QueueOverflow);
        let n = loss_event(&p, SimTime::from_secs_f64(3.2), 5_000).unwrap();
        assert_eq!(n.time, SimTime::from_secs_f64(3.205));
        assert_eq!(n.flow_id, 2);
    }
}

//! Deterministic discrete-event network and compute-latency model.
//!
//! Messages are scheduled against a link model (base latency, uniform
//! jitter, loss probability, communication radius) and delivered in
//! `(deliver_at, sequence)` order, so identical inputs replay identical
//! event logs. Decision latency is modeled, not measured: per-layer
//! compute constants plus whatever network legs sit on a decision's
//! critical path.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Vec3;
use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum SimnetError {
    #[error("cannot advance backwards: clock at {now}, asked for {until}")]
    ClockRegression { now: f64, until: f64 },
}

/// Point-to-point link parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub base_latency_s: f64,
    /// Uniform jitter half-width, seconds.
    pub jitter_s: f64,
    pub loss_prob: f64,
    pub comm_radius_m: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            base_latency_s: 0.005,
            jitter_s: 0.002,
            loss_prob: 0.01,
            comm_radius_m: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Message,
    Timer,
}

/// A scheduled delivery.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<T> {
    pub deliver_at: f64,
    pub sequence: u64,
    pub kind: EventKind,
    pub src: u32,
    pub dst: u32,
    pub bytes: usize,
    pub payload: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SendOutcome {
    Scheduled { deliver_at: f64 },
    DroppedOutOfRange,
    DroppedLoss,
}

/// Conservation counters: every send is exactly one of scheduled,
/// dropped(loss), dropped(range).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_range: u64,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
    pub delay_sum_s: f64,
}

/// One line of the exportable event log.
#[derive(Debug, Clone, PartialEq)]
pub struct NetLogRecord {
    pub time: f64,
    pub kind: &'static str,
    pub src: u32,
    pub dst: u32,
    pub bytes: usize,
    pub outcome: &'static str,
}

struct Queued<T>(SimEvent<T>);

impl<T> PartialEq for Queued<T> {
    fn eq(&self, other: &Self) -> bool {
        self.0.sequence == other.0.sequence
    }
}
impl<T> Eq for Queued<T> {}
impl<T> PartialOrd for Queued<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Queued<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .deliver_at
            .total_cmp(&other.0.deliver_at)
            .then(self.0.sequence.cmp(&other.0.sequence))
    }
}

/// The event queue: a simulation clock plus pending deliveries.
pub struct EventQueue<T> {
    now: f64,
    next_sequence: u64,
    heap: BinaryHeap<Reverse<Queued<T>>>,
    pub stats: NetStats,
    log: Option<Vec<NetLogRecord>>,
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            stats: NetStats::default(),
            log: None,
        }
    }

    /// Start recording an exportable event log.
    pub fn with_logging(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn log(&self) -> Option<&[NetLogRecord]> {
        self.log.as_deref()
    }

    fn record(
        &mut self,
        time: f64,
        kind: &'static str,
        src: u32,
        dst: u32,
        bytes: usize,
        outcome: &'static str,
    ) {
        if let Some(log) = &mut self.log {
            log.push(NetLogRecord {
                time,
                kind,
                src,
                dst,
                bytes,
                outcome,
            });
        }
    }

    /// Send a message over `link`. Out-of-range sends consume no random
    /// draws; in-range sends draw loss first, then jitter.
    #[allow(clippy::too_many_arguments)]
    pub fn send(
        &mut self,
        src: u32,
        dst: u32,
        bytes: usize,
        payload: T,
        link: &LinkModel,
        src_pos: Vec3,
        dst_pos: Vec3,
        rng: &mut RngStream,
    ) -> SendOutcome {
        self.stats.sent += 1;
        self.stats.bytes_sent += bytes as u64;
        if src_pos.distance(dst_pos) > link.comm_radius_m {
            self.stats.dropped_range += 1;
            self.record(self.now, "message", src, dst, bytes, "dropped_range");
            return SendOutcome::DroppedOutOfRange;
        }
        if link.loss_prob > 0.0 && rng.uniform01() < link.loss_prob {
            self.stats.dropped_loss += 1;
            self.record(self.now, "message", src, dst, bytes, "dropped_loss");
            return SendOutcome::DroppedLoss;
        }
        let jitter = if link.jitter_s > 0.0 {
            (rng.uniform01() * 2.0 - 1.0) * link.jitter_s
        } else {
            0.0
        };
        let deliver_at = (self.now + link.base_latency_s + jitter).max(self.now);
        self.push(deliver_at, EventKind::Message, src, dst, bytes, payload);
        SendOutcome::Scheduled { deliver_at }
    }

    /// Schedule a timer owned by `dst` at an absolute time.
    pub fn schedule_timer(&mut self, at: f64, dst: u32, payload: T) {
        let at = at.max(self.now);
        self.push(at, EventKind::Timer, dst, dst, 0, payload);
    }

    fn push(
        &mut self,
        deliver_at: f64,
        kind: EventKind,
        src: u32,
        dst: u32,
        bytes: usize,
        payload: T,
    ) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(Queued(SimEvent {
            deliver_at,
            sequence,
            kind,
            src,
            dst,
            bytes,
            payload,
        })));
    }

    /// Deliver everything due by `until` in `(deliver_at, sequence)`
    /// order and advance the clock.
    pub fn advance(&mut self, until: f64) -> Result<Vec<SimEvent<T>>, SimnetError> {
        if until < self.now {
            return Err(SimnetError::ClockRegression {
                now: self.now,
                until,
            });
        }
        let mut out = Vec::new();
        while let Some(Reverse(head)) = self.heap.peek() {
            if head.0.deliver_at > until {
                break;
            }
            let Reverse(Queued(event)) = self.heap.pop().expect("peeked");
            self.now = event.deliver_at;
            if event.kind == EventKind::Message {
                self.stats.delivered += 1;
                self.stats.bytes_delivered += event.bytes as u64;
                self.record(
                    event.deliver_at,
                    "message",
                    event.src,
                    event.dst,
                    event.bytes,
                    "delivered",
                );
            } else {
                self.record(event.deliver_at, "timer", event.src, event.dst, 0, "fired");
            }
            out.push(event);
        }
        self.now = until;
        Ok(out)
    }
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Write the event log as CSV: `time,kind,src,dst,bytes,outcome`.
pub fn write_event_log_csv<W: std::io::Write>(
    records: &[NetLogRecord],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "time,kind,src,dst,bytes,outcome")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.time, r.kind, r.src, r.dst, r.bytes, r.outcome
        )?;
    }
    Ok(())
}

/// Modeled compute costs per layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeCostModel {
    /// Seconds per local neighbor pair (dense layer cost is
    /// `c_local * neighbors^2`).
    pub c_local_pair_s: f64,
    /// Seconds per selected sparse neighbor.
    pub c_regional_neighbor_s: f64,
    /// Seconds per consensus round.
    pub c_global_round_s: f64,
}

impl Default for ComputeCostModel {
    fn default() -> Self {
        Self {
            c_local_pair_s: 80e-6,
            c_regional_neighbor_s: 300e-6,
            c_global_round_s: 5e-3,
        }
    }
}

/// The per-layer work and network legs on one decision's critical path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionPath {
    /// Neighbors attended densely in the local phase.
    pub local_neighbors: usize,
    /// Sparse neighbors attended regionally, when phase 2 ran.
    pub regional_neighbors: Option<usize>,
    /// Consensus rounds on the critical path, if any.
    pub consensus_rounds: usize,
    /// Network delays actually incurred on the path, seconds.
    pub network_legs_s: Vec<f64>,
}

/// Sum of modeled compute along the escalation path plus the network legs.
pub fn decision_latency(path: &DecisionPath, cost: &ComputeCostModel) -> f64 {
    let local = cost.c_local_pair_s * (path.local_neighbors * path.local_neighbors) as f64;
    let regional = path
        .regional_neighbors
        .map_or(0.0, |k| cost.c_regional_neighbor_s * k as f64);
    let global = cost.c_global_round_s * path.consensus_rounds as f64;
    let network: f64 = path.network_legs_s.iter().sum();
    local + regional + global + network
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quiet_link() -> LinkModel {
        LinkModel {
            base_latency_s: 0.010,
            jitter_s: 0.0,
            loss_prob: 0.0,
            comm_radius_m: 1000.0,
        }
    }

    #[test]
    fn out_of_range_is_dropped() {
        let mut q: EventQueue<u8> = EventQueue::new();
        let mut rng = RngStream::new(0, 0);
        let out = q.send(
            0,
            1,
            10,
            0,
            &LinkModel::default(),
            Vec3::ZERO,
            Vec3::new(1500.0, 0.0, 0.0),
            &mut rng,
        );
        assert_eq!(out, SendOutcome::DroppedOutOfRange);
        assert_eq!(q.stats.dropped_range, 1);
    }

    #[test]
    fn deterministic_link_delivers_exactly_on_time() {
        let mut q: EventQueue<u8> = EventQueue::new();
        let mut rng = RngStream::new(0, 0);
        let out = q.send(0, 1, 10, 7, &quiet_link(), Vec3::ZERO, Vec3::ZERO, &mut rng);
        assert_eq!(out, SendOutcome::Scheduled { deliver_at: 0.010 });
        let events = q.advance(0.010).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].payload, 7);
    }

    #[test]
    fn loss_fraction_matches_probability() {
        let mut q: EventQueue<u8> = EventQueue::new();
        let mut rng = RngStream::new(42, 0);
        let link = LinkModel {
            loss_prob: 0.1,
            ..quiet_link()
        };
        let n = 100_000;
        for _ in 0..n {
            q.send(0, 1, 1, 0, &link, Vec3::ZERO, Vec3::ZERO, &mut rng);
        }
        let frac = q.stats.dropped_loss as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.003, "drop fraction {frac}");
    }

    #[test]
    fn ties_deliver_in_sequence_order() {
        let mut q: EventQueue<u32> = EventQueue::new();
        let mut rng = RngStream::new(0, 0);
        for i in 0..5 {
            q.send(0, 1, 0, i, &quiet_link(), Vec3::ZERO, Vec3::ZERO, &mut rng);
        }
        let events = q.advance(1.0).unwrap();
        let payloads: Vec<u32> = events.iter().map(|e| e.payload).collect();
        assert_eq!(payloads, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_queue_advance_moves_clock() {
        let mut q: EventQueue<u8> = EventQueue::new();
        assert!(q.advance(5.0).unwrap().is_empty());
        assert_eq!(q.now(), 5.0);
        assert!(matches!(
            q.advance(1.0),
            Err(SimnetError::ClockRegression { .. })
        ));
    }

    #[test]
    fn conservation_over_random_traffic() {
        let mut q: EventQueue<u8> = EventQueue::new();
        let mut rng = RngStream::new(7, 0);
        let link = LinkModel {
            loss_prob: 0.2,
            comm_radius_m: 50.0,
            ..LinkModel::default()
        };
        let n = 10_000u64;
        for i in 0..n {
            let dst_pos = Vec3::new((i % 100) as f64, 0.0, 0.0);
            q.send(0, 1, 1, 0, &link, Vec3::ZERO, dst_pos, &mut rng);
        }
        let delivered = q.advance(1.0).unwrap().len() as u64;
        assert_eq!(q.stats.sent, n);
        assert_eq!(
            q.stats.dropped_loss + q.stats.dropped_range + delivered,
            n
        );
        assert_eq!(q.stats.delivered, delivered);
    }

    #[test]
    fn event_log_csv_schema() {
        let mut q: EventQueue<u8> = EventQueue::new().with_logging();
        let mut rng = RngStream::new(0, 0);
        q.send(3, 4, 9, 0, &quiet_link(), Vec3::ZERO, Vec3::ZERO, &mut rng);
        q.advance(1.0).unwrap();
        let mut out = Vec::new();
        write_event_log_csv(q.log().unwrap(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,kind,src,dst,bytes,outcome"));
        assert_eq!(lines.next(), Some("0.01,message,3,4,9,delivered"));
    }

    #[test]
    fn decision_latency_examples() {
        let cost = ComputeCostModel::default();
        // Local-only decision with 5 neighbors: 25 * c_local.
        let local = DecisionPath {
            local_neighbors: 5,
            ..DecisionPath::default()
        };
        assert!((decision_latency(&local, &cost) - 25.0 * 80e-6).abs() < 1e-12);

        // One regional round trip of 2 x 10 ms rides on top.
        let with_net = DecisionPath {
            local_neighbors: 5,
            regional_neighbors: Some(4),
            network_legs_s: vec![0.010, 0.010],
            ..DecisionPath::default()
        };
        let expected = 25.0 * 80e-6 + 4.0 * 300e-6 + 0.020;
        assert!((decision_latency(&with_net, &cost) - expected).abs() < 1e-12);

        assert_eq!(decision_latency(&DecisionPath::default(), &cost), 0.0);
    }

    proptest! {
        #[test]
        fn delivery_order_matches_sort_oracle(
            delays in proptest::collection::vec(0.0..0.1f64, 1..40),
        ) {
            let mut q: EventQueue<usize> = EventQueue::new();
            for (i, d) in delays.iter().enumerate() {
                let link = LinkModel {
                    base_latency_s: *d,
                    jitter_s: 0.0,
                    loss_prob: 0.0,
                    comm_radius_m: 1.0,
                };
                let mut rng = RngStream::new(0, i as u64);
                q.send(0, 1, 0, i, &link, Vec3::ZERO, Vec3::ZERO, &mut rng);
            }
            let got: Vec<usize> = q.advance(1.0).unwrap().iter().map(|e| e.payload).collect();

            let mut expected: Vec<(f64, usize)> =
                delays.iter().enumerate().map(|(i, d)| (*d, i)).collect();
            expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = expected.into_iter().map(|(_, i)| i).collect();
            prop_assert_eq!(got, expected);

            // Causality: nothing delivered before its base latency.
            prop_assert!(q.stats.delivered == delays.len() as u64);
        }
    }
}

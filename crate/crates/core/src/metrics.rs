//! Run counters and the serialized result of a single run.
//!
//! Metrics are write-only from the simulation's point of view. Recording
//! never draws random numbers or schedules events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Architecture;
use crate::engine::{SimTime, RNG_ALGORITHM};
use crate::link::{Entity, MessageKind, Side};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerNode<T> {
    pub a: T,
    pub b: T,
}

impl<T: Copy> PerNode<T> {
    pub fn get(&self, side: Side) -> T {
        match side {
            Side::A => self.a,
            Side::B => self.b,
        }
    }

    fn slot(&mut self, side: Side) -> &mut T {
        match side {
            Side::A => &mut self.a,
            Side::B => &mut self.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricEvent {
    PairEstablished { fidelity: f64 },
    MessageSent { kind: MessageKind, from: Entity, to: Entity },
    MessageDelivered { kind: MessageKind, from: Entity, to: Entity },
    BsmAttempt { side: Side, success: bool },
    EppsRound,
}

type EdgeKey = (MessageKind, Entity, Entity);

fn edge_label((kind, from, to): &EdgeKey) -> String {
    format!("{kind}:{from}->{to}")
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    fidelities: Vec<f64>,
    sent: BTreeMap<EdgeKey, u64>,
    delivered: BTreeMap<EdgeKey, u64>,
    attempts: PerNode<u64>,
    successes: PerNode<u64>,
    epps_rounds: u64,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, event: MetricEvent) {
        match event {
            MetricEvent::PairEstablished { fidelity } => self.fidelities.push(fidelity),
            MetricEvent::MessageSent { kind, from, to } => {
                *self.sent.entry((kind, from, to)).or_default() += 1
            }
            MetricEvent::MessageDelivered { kind, from, to } => {
                *self.delivered.entry((kind, from, to)).or_default() += 1
            }
            MetricEvent::BsmAttempt { side, success } => {
                *self.attempts.slot(side) += 1;
                if success {
                    *self.successes.slot(side) += 1;
                }
            }
            MetricEvent::EppsRound => self.epps_rounds += 1,
        }
    }

    pub fn pairs(&self) -> u64 {
        self.fidelities.len() as u64
    }

    pub fn sent(&self, kind: MessageKind, from: Entity, to: Entity) -> u64 {
        self.sent.get(&(kind, from, to)).copied().unwrap_or(0)
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.values().sum()
    }

    pub fn total_delivered(&self) -> u64 {
        self.delivered.values().sum()
    }

    /// Sent and delivered tallies agree on every edge.
    pub fn messages_conserved(&self) -> bool {
        self.sent == self.delivered
    }

    pub fn attempts(&self, side: Side) -> u64 {
        self.attempts.get(side)
    }

    pub fn successes(&self, side: Side) -> u64 {
        self.successes.get(side)
    }

    pub fn epps_rounds(&self) -> u64 {
        self.epps_rounds
    }
}

/// Time integral of how many memories are not Free.
#[derive(Debug, Clone, Default)]
pub struct OccupancyTracker {
    busy: u32,
    last_change: SimTime,
    integral_ps: u128,
}

impl OccupancyTracker {
    pub fn set_busy(&mut self, busy: u32, now: SimTime) {
        self.integral_ps += u128::from(self.busy) * u128::from((now - self.last_change).as_ps());
        self.last_change = now;
        self.busy = busy;
    }

    pub fn busy(&self) -> u32 {
        self.busy
    }

    /// Occupancy integral divided by `memories × until`.
    pub fn fraction(&self, memories: u32, until: SimTime) -> f64 {
        let open = u128::from(self.busy) * u128::from(until.saturating_sub(self.last_change).as_ps());
        let capacity = u128::from(memories) * u128::from(until.as_ps());
        if capacity == 0 {
            0.0
        } else {
            (self.integral_ps + open) as f64 / capacity as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub architecture: Architecture,
    pub node_separation_km: f64,
    pub memories_per_node: u32,
    pub seed: u64,
    pub rng_algorithm: String,
    pub completed: bool,
    /// Completion time, or the exhaustion/horizon time when not completed.
    pub completion_time_ps: u64,
    pub pairs_established: u64,
    pub fidelity_mean: Option<f64>,
    pub fidelity_values: Vec<f64>,
    /// Sent count per `Kind:From->To`.
    pub messages: BTreeMap<String, u64>,
    pub bsm_attempts: PerNode<u64>,
    pub bsm_successes: PerNode<u64>,
    pub epps_rounds: u64,
    pub memory_busy_fraction: PerNode<f64>,
}

pub struct RunSummary<'a> {
    pub architecture: Architecture,
    pub node_separation_km: f64,
    pub memories_per_node: u32,
    pub seed: u64,
    pub completed: bool,
    pub end_time: SimTime,
    pub metrics: &'a Metrics,
    pub occupancy: [&'a OccupancyTracker; 2],
}

impl SimResult {
    pub fn from_run(run: RunSummary<'_>) -> Self {
        let m = run.metrics;
        let fidelity_mean = if m.fidelities.is_empty() {
            None
        } else {
            Some(m.fidelities.iter().sum::<f64>() / m.fidelities.len() as f64)
        };
        SimResult {
            architecture: run.architecture,
            node_separation_km: run.node_separation_km,
            memories_per_node: run.memories_per_node,
            seed: run.seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            completed: run.completed,
            completion_time_ps: run.end_time.as_ps(),
            pairs_established: m.pairs(),
            fidelity_mean,
            fidelity_values: m.fidelities.clone(),
            messages: m.sent.iter().map(|(k, v)| (edge_label(k), *v)).collect(),
            bsm_attempts: m.attempts,
            bsm_successes: m.successes,
            epps_rounds: m.epps_rounds,
            memory_busy_fraction: PerNode {
                a: run.occupancy[0].fraction(run.memories_per_node, run.end_time),
                b: run.occupancy[1].fraction(run.memories_per_node, run.end_time),
            },
        }
    }

    pub fn messages_total(&self) -> u64 {
        self.messages.values().sum()
    }

    pub fn messages_of_kind(&self, kind: MessageKind) -> u64 {
        let prefix = format!("{kind}:");
        self.messages
            .iter()
            .filter(|(k, _)| k.starts_with(&prefix))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn messages_on(&self, kind: MessageKind, from: Entity, to: Entity) -> u64 {
        self.messages
            .get(&edge_label(&(kind, from, to)))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("node {0} made no BSM attempts; success rate undefined")]
    NoAttempts(Side),
}

pub fn empirical_bsm_rate(result: &SimResult, side: Side) -> Result<f64, MetricsError> {
    let attempts = result.bsm_attempts.get(side);
    if attempts == 0 {
        return Err(MetricsError::NoAttempts(side));
    }
    Ok(result.bsm_successes.get(side) as f64 / attempts as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(metrics: &Metrics, occ: &OccupancyTracker) -> SimResult {
        SimResult::from_run(RunSummary {
            architecture: Architecture::Msm,
            node_separation_km: 1.0,
            memories_per_node: 2,
            seed: 9,
            completed: true,
            end_time: SimTime::from_ps(100),
            metrics,
            occupancy: [occ, occ],
        })
    }

    #[test]
    fn pair_event_appends_fidelity() {
        let mut m = Metrics::new();
        m.record(MetricEvent::PairEstablished { fidelity: 0.7 });
        m.record(MetricEvent::PairEstablished { fidelity: 0.9 });
        let r = summary(&m, &OccupancyTracker::default());
        assert_eq!(r.pairs_established, 2);
        assert_eq!(r.fidelity_values, vec![0.7, 0.9]);
        assert!((r.fidelity_mean.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn messages_keyed_by_kind_and_edge() {
        let mut m = Metrics::new();
        let a = Entity::Node(Side::A);
        let b = Entity::Node(Side::B);
        m.record(MetricEvent::MessageSent { kind: MessageKind::BsmResult, from: a, to: b });
        m.record(MetricEvent::MessageSent { kind: MessageKind::BsmResult, from: a, to: b });
        m.record(MetricEvent::MessageSent { kind: MessageKind::StopEppsEmission, from: b, to: Entity::Epps });
        assert!(!m.messages_conserved());
        let r = summary(&m, &OccupancyTracker::default());
        assert_eq!(r.messages["BsmResult:NodeA->NodeB"], 2);
        assert_eq!(r.messages_on(MessageKind::BsmResult, a, b), 2);
        assert_eq!(r.messages_of_kind(MessageKind::BsmResult), 2);
        assert_eq!(r.messages_total(), 3);
        for _ in 0..2 {
            m.record(MetricEvent::MessageDelivered { kind: MessageKind::BsmResult, from: a, to: b });
        }
        m.record(MetricEvent::MessageDelivered { kind: MessageKind::StopEppsEmission, from: b, to: Entity::Epps });
        assert!(m.messages_conserved());
    }

    #[test]
    fn bsm_rate() {
        let mut m = Metrics::new();
        let r = summary(&m, &OccupancyTracker::default());
        assert_eq!(empirical_bsm_rate(&r, Side::A), Err(MetricsError::NoAttempts(Side::A)));
        for _ in 0..4 {
            m.record(MetricEvent::BsmAttempt { side: Side::A, success: false });
        }
        let r = summary(&m, &OccupancyTracker::default());
        assert_eq!(empirical_bsm_rate(&r, Side::A), Ok(0.0));
        m.record(MetricEvent::BsmAttempt { side: Side::B, success: true });
        let r = summary(&m, &OccupancyTracker::default());
        assert_eq!(empirical_bsm_rate(&r, Side::B), Ok(1.0));
    }

    #[test]
    fn occupancy_integral() {
        let mut occ = OccupancyTracker::default();
        occ.set_busy(1, SimTime::from_ps(10));
        occ.set_busy(2, SimTime::from_ps(30));
        occ.set_busy(0, SimTime::from_ps(50));
        // 1×20 + 2×20 = 60 over 2 memories × 100 ps
        assert!((occ.fraction(2, SimTime::from_ps(100)) - 0.3).abs() < 1e-15);
        occ.set_busy(2, SimTime::from_ps(60));
        assert!((occ.fraction(2, SimTime::from_ps(100)) - 0.7).abs() < 1e-15);
        assert_eq!(OccupancyTracker::default().fraction(4, SimTime::ZERO), 0.0);
    }
}

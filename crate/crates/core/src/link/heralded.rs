//! Links heralded by a single BSA: MIM with the analyzer between the nodes,
//! MM with the analyzer inside one of them.
//!
//! Emission slots are synchronized so that the photons of slot `s` reach the
//! BSA together at `t_max + (s - 1) * interval`, where `t_max` is the longer
//! of the two photon flights. Memories stay busy from emission until the
//! BSA's result reaches their node.

use std::collections::BTreeMap;

use crate::config::{Architecture, LinkConfig, MimEmission};
use crate::engine::{EngineError, Event, Handler, RandomStream, RunOutcome, Scheduler, SimTime, TraceTag};
use crate::metrics::{MetricEvent, Metrics, RunSummary, SimResult};
use crate::quantum::{bsm_attempt, BellDiagonalState, PauliLabel};

use super::{flight, stream_name, ClassicalMessage, Entity, LinkWorld, MemoryBank, MemoryStatus, PairRecord, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Photon {
    pub photon_index: u64,
    pub lost: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeraldedEvent {
    Tick,
    /// Photons one node emitted for a slot, possibly none.
    TimeBin { side: Side, slot: u64, photons: Vec<Photon> },
    Deliver {
        from: Entity,
        message: ClassicalMessage,
        /// Pair created by a successful measurement.
        pair: Option<u64>,
        /// Delivered inside a node rather than over fiber.
        local: bool,
    },
}

impl TraceTag for HeraldedEvent {
    fn tag(&self) -> &'static str {
        match self {
            HeraldedEvent::Tick => "Tick",
            HeraldedEvent::TimeBin { .. } => "TimeBin",
            HeraldedEvent::Deliver { local: true, .. } => "LocalBsmResult",
            HeraldedEvent::Deliver { message, .. } => message.kind().as_str(),
        }
    }
}

struct Node {
    side: Side,
    memories: MemoryBank,
    emitted: u64,
    slot: u64,
    /// Photon index to emitting memory, until the result comes back.
    pending: BTreeMap<u64, u32>,
    established: u64,
    stopped: bool,
    rng: RandomStream,
}

type Bin = [Option<Vec<Photon>>; 2];

pub struct HeraldedWorld {
    cfg: LinkConfig,
    seed: u64,
    side_flight: [SimTime; 2],
    survival: [f64; 2],
    /// Result delivery at the BSA-owning node of an MM link stays inside it.
    local: [bool; 2],
    pair_state: BellDiagonalState,
    nodes: [Node; 2],
    bins: BTreeMap<u64, Bin>,
    bsa_rng: RandomStream,
    attempts: u64,
    pairs: BTreeMap<u64, PairRecord>,
    completed: u64,
    metrics: Metrics,
}

/// Depolarizing strength per memory-photon leg so that the two legs together
/// match one application of `lambda`.
pub fn leg_lambda(lambda: f64) -> f64 {
    1.0 - (1.0 - lambda).sqrt()
}

impl HeraldedWorld {
    pub fn new(cfg: &LinkConfig, seed: u64) -> Result<Self, EngineError> {
        if cfg.architecture == Architecture::Msm {
            return Err(EngineError::Invariant("heralded world built for an MSM config".into()));
        }
        let topology = cfg.topology();
        let distance = Side::BOTH.map(|s| topology.side_distance_km(s));
        let side_flight = [flight(distance[0], cfg)?, flight(distance[1], cfg)?];
        let leg = BellDiagonalState::PERFECT
            .depolarize(leg_lambda(cfg.epps_depolarizing_lambda))
            .map_err(|e| EngineError::Invariant(e.to_string()))?;
        let node = |side| Node {
            side,
            memories: MemoryBank::new(cfg.memories_per_node),
            emitted: 0,
            slot: 0,
            pending: BTreeMap::new(),
            established: 0,
            stopped: false,
            rng: RandomStream::derive(seed, &stream_name(cfg, Entity::Node(side))),
        };
        Ok(HeraldedWorld {
            cfg: cfg.clone(),
            seed,
            side_flight,
            survival: distance.map(|d| cfg.attenuation.transmittance(d)),
            local: distance.map(|d| cfg.architecture == Architecture::Mm && d == 0.0),
            pair_state: leg.swap_compose(&leg),
            nodes: [node(Side::A), node(Side::B)],
            bins: BTreeMap::new(),
            bsa_rng: RandomStream::derive(seed, &stream_name(cfg, Entity::Bsa)),
            attempts: 0,
            pairs: BTreeMap::new(),
            completed: 0,
            metrics: Metrics::new(),
        })
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn memories(&self, side: Side) -> &MemoryBank {
        &self.nodes[side.index()].memories
    }

    pub fn established(&self, side: Side) -> u64 {
        self.nodes[side.index()].established
    }

    pub fn stream_fingerprints(&self) -> [u64; 3] {
        [
            self.bsa_rng.fingerprint(),
            self.nodes[0].rng.fingerprint(),
            self.nodes[1].rng.fingerprint(),
        ]
    }

    fn slot_arrival(&self) -> SimTime {
        self.side_flight[0].max(self.side_flight[1])
    }

    fn tick(&mut self, side: Side, scheduler: &mut Scheduler<Entity, HeraldedEvent>) {
        let now = scheduler.now();
        let survival = self.survival[side.index()];
        let node = &mut self.nodes[side.index()];
        if node.stopped {
            return;
        }
        node.slot += 1;
        let emitters = match self.cfg.mim_emission {
            MimEmission::OnePerTick => node.memories.free_count().min(1),
            MimEmission::AllFree => node.memories.free_count(),
        };
        let mut photons = Vec::with_capacity(emitters);
        for _ in 0..emitters {
            node.emitted += 1;
            let photon_index = node.emitted;
            let mem = node.memories.emit(photon_index, now).expect("free memory");
            node.pending.insert(photon_index, mem);
            let lost = !node.rng.bernoulli(survival);
            photons.push(Photon { photon_index, lost });
        }
        let slot = node.slot;
        scheduler.schedule_in(
            self.side_flight[side.index()],
            Entity::Bsa,
            HeraldedEvent::TimeBin { side, slot, photons },
        );
        scheduler.schedule_in(self.cfg.memory_interval(), Entity::Node(side), HeraldedEvent::Tick);
    }

    fn time_bin(
        &mut self,
        side: Side,
        slot: u64,
        photons: Vec<Photon>,
        scheduler: &mut Scheduler<Entity, HeraldedEvent>,
    ) -> Result<(), EngineError> {
        let bin = self.bins.entry(slot).or_default();
        if bin[side.index()].replace(photons).is_some() {
            return Err(EngineError::Invariant(format!("slot {slot} filled twice by node {side}")));
        }
        if bin.iter().any(Option::is_none) {
            return Ok(());
        }
        let [Some(a), Some(b)] = self.bins.remove(&slot).expect("bin present") else {
            unreachable!("both halves checked");
        };
        for i in 0..a.len().max(b.len()) {
            let pair = [a.get(i).copied(), b.get(i).copied()];
            let both_arrived = pair.iter().all(|p| p.is_some_and(|p| !p.lost));
            let outcome = bsm_attempt(both_arrived, self.cfg.p_bsa, &mut self.bsa_rng);
            self.attempts += 1;
            let key = self.attempts;
            if outcome.success {
                let frame = if outcome.correction.is_set() {
                    PauliLabel::Y
                } else {
                    PauliLabel::X
                };
                self.pairs.insert(key, PairRecord::new(key, self.pair_state, frame));
            }
            for side in Side::BOTH {
                let Some(photon) = pair[side.index()] else {
                    continue;
                };
                self.metrics.record(MetricEvent::BsmAttempt {
                    side,
                    success: outcome.success,
                });
                let message = ClassicalMessage::BsmResult {
                    success: outcome.success,
                    correction: outcome.correction,
                    photon_index: photon.photon_index,
                };
                let local = self.local[side.index()];
                if !local {
                    self.metrics.record(MetricEvent::MessageSent {
                        kind: message.kind(),
                        from: Entity::Bsa,
                        to: Entity::Node(side),
                    });
                }
                scheduler.schedule_in(
                    self.side_flight[side.index()],
                    Entity::Node(side),
                    HeraldedEvent::Deliver {
                        from: Entity::Bsa,
                        message,
                        pair: outcome.success.then_some(key),
                        local,
                    },
                );
            }
        }
        Ok(())
    }

    fn result_at_node(
        &mut self,
        side: Side,
        message: ClassicalMessage,
        pair: Option<u64>,
        scheduler: &mut Scheduler<Entity, HeraldedEvent>,
    ) -> Result<(), EngineError> {
        let now = scheduler.now();
        let ClassicalMessage::BsmResult { success, correction, photon_index } = message else {
            return Err(EngineError::Invariant(format!("node {side} got {}", message.kind())));
        };
        let node = &mut self.nodes[side.index()];
        if node.stopped {
            return Ok(());
        }
        let mem = node
            .pending
            .remove(&photon_index)
            .ok_or_else(|| EngineError::Invariant(format!("node {side}: no memory for photon {photon_index}")))?;
        if !success {
            return node.memories.reset(mem, now);
        }
        let key = pair.ok_or_else(|| EngineError::Invariant("success without a pair".into()))?;
        let record = self
            .pairs
            .get_mut(&key)
            .ok_or_else(|| EngineError::Invariant(format!("unknown pair {key}")))?;
        let applied = if side.applies_corrections() {
            record.frame
        } else {
            PauliLabel::I
        };
        let local_view = record.raw_state().apply_pauli(applied);
        record.record_side(side, Some(correction), applied, now);
        let finished = record.final_state.filter(|_| record.is_complete());

        node.memories.establish(mem, local_view, now)?;
        node.memories.reset(mem, now)?;
        node.established += 1;
        if let Some(final_state) = finished {
            self.completed += 1;
            self.metrics.record(MetricEvent::PairEstablished {
                fidelity: final_state.fidelity(),
            });
        }
        if node.established >= self.cfg.target_pairs {
            node.stopped = true;
            node.pending.clear();
            node.memories.reset_all(now);
        }
        Ok(())
    }
}

impl Handler for HeraldedWorld {
    type Target = Entity;
    type Payload = HeraldedEvent;

    fn handle(
        &mut self,
        event: Event<Entity, HeraldedEvent>,
        scheduler: &mut Scheduler<Entity, HeraldedEvent>,
    ) -> Result<(), EngineError> {
        match (event.target, event.payload) {
            (Entity::Node(side), HeraldedEvent::Tick) => {
                self.tick(side, scheduler);
                Ok(())
            }
            (Entity::Bsa, HeraldedEvent::TimeBin { side, slot, photons }) => {
                self.time_bin(side, slot, photons, scheduler)
            }
            (Entity::Node(side), HeraldedEvent::Deliver { from, message, pair, local }) => {
                if !local {
                    self.metrics.record(MetricEvent::MessageDelivered {
                        kind: message.kind(),
                        from,
                        to: event.target,
                    });
                }
                self.result_at_node(side, message, pair, scheduler)
            }
            (target, payload) => Err(EngineError::Invariant(format!(
                "{target} cannot handle {}",
                payload.tag()
            ))),
        }
    }
}

impl LinkWorld for HeraldedWorld {
    fn start(&mut self, scheduler: &mut Scheduler<Entity, HeraldedEvent>) -> Result<(), EngineError> {
        if self.cfg.target_pairs == 0 {
            return Ok(());
        }
        let arrival = self.slot_arrival();
        for side in Side::BOTH {
            let first = arrival - self.side_flight[side.index()];
            scheduler.schedule(first, Entity::Node(side), HeraldedEvent::Tick)?;
        }
        Ok(())
    }

    fn pairs_completed(&self) -> u64 {
        self.completed
    }

    fn target_pairs(&self) -> u64 {
        self.cfg.target_pairs
    }

    fn result(&self, outcome: RunOutcome) -> SimResult {
        SimResult::from_run(RunSummary {
            architecture: self.cfg.architecture,
            node_separation_km: self.cfg.node_separation_km,
            memories_per_node: self.cfg.memories_per_node,
            seed: self.seed,
            completed: outcome.is_completed(),
            end_time: outcome.time(),
            metrics: &self.metrics,
            occupancy: [
                self.nodes[0].memories.occupancy(),
                self.nodes[1].memories.occupancy(),
            ],
        })
    }

    fn pair_records(&self) -> Vec<PairRecord> {
        self.pairs.values().cloned().collect()
    }

    fn check_invariants(&self) -> Result<(), EngineError> {
        let fail = |msg: String| Err(EngineError::Invariant(msg));
        for node in &self.nodes {
            node.memories.check()?;
            if node.memories.established_total() != node.established {
                return fail(format!("node {}: established tally mismatch", node.side));
            }
            for (index, mem) in &node.pending {
                let m = node.memories.get(*mem).expect("bank memory");
                if m.status != MemoryStatus::EmittedAwaitingLocalBsm || m.bound_photon_index != Some(*index) {
                    return fail(format!("node {}: pending memory {mem} out of sync", node.side));
                }
            }
            if node.pending.len() != node.memories.len() - node.memories.free_count() {
                return fail(format!("node {}: busy memories without a pending photon", node.side));
            }
        }
        for record in self.pairs.values() {
            record.check()?;
        }
        if self.pairs.values().filter(|r| r.is_complete()).count() as u64 != self.completed {
            return fail("completed pair count out of sync".into());
        }
        Ok(())
    }
}

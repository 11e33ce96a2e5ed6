//! Source-in-the-middle link: an EPPS between two nodes, each with its own
//! internal BSA, exchanging per-round results.

use std::collections::BTreeMap;

use crate::config::LinkConfig;
use crate::engine::{EngineError, Event, Handler, RandomStream, RunOutcome, Scheduler, SimTime, TraceTag};
use crate::metrics::{MetricEvent, Metrics, RunSummary, SimResult};
use crate::quantum::{bsm_attempt, correction_for, BellDiagonalState, CorrectionBit, PauliLabel};

use super::{
    flight, stream_name, ClassicalMessage, Entity, LinkWorld, MemoryBank, MemoryStatus, MessageKind,
    PairRecord, Side, SuccessMap,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MsmEvent {
    /// Source emits the next pair.
    EppsEmit,
    /// Node emission clock (one photon index per tick).
    Tick,
    /// Source photon reaches a node's internal BSA.
    EppsPhoton { round: u64, lost: bool },
    Deliver { from: Entity, message: ClassicalMessage },
}

impl TraceTag for MsmEvent {
    fn tag(&self) -> &'static str {
        match self {
            MsmEvent::EppsEmit => "EppsEmit",
            MsmEvent::Tick => "Tick",
            MsmEvent::EppsPhoton { lost: false, .. } => "EppsPhoton",
            MsmEvent::EppsPhoton { lost: true, .. } => "EppsPhotonLost",
            MsmEvent::Deliver { message, .. } => message.kind().as_str(),
        }
    }
}

struct Source {
    interval: SimTime,
    round: u64,
    stopped: bool,
    rng: RandomStream,
    survival: [f64; 2],
}

struct Node {
    side: Side,
    memories: MemoryBank,
    success_map: SuccessMap,
    photon_index: u64,
    interval: Option<SimTime>,
    /// Rounds whose memory photon waits for the source photon.
    emitted: BTreeMap<u64, u32>,
    /// Source photons that arrived before the tick of their round.
    early: BTreeMap<u64, bool>,
    /// Rounds still awaiting their source photon when the node stopped.
    abandoned: u64,
    established: u64,
    stopped: bool,
    rng: RandomStream,
}

pub struct MsmWorld {
    cfg: LinkConfig,
    seed: u64,
    side_flight: [SimTime; 2],
    cross_flight: SimTime,
    epps_state: BellDiagonalState,
    source: Source,
    nodes: [Node; 2],
    pairs: BTreeMap<u64, PairRecord>,
    completed: u64,
    metrics: Metrics,
}

impl MsmWorld {
    pub fn new(cfg: &LinkConfig, seed: u64) -> Result<Self, EngineError> {
        let topology = cfg.topology();
        let side_flight = [
            flight(topology.side_distance_km(Side::A), cfg)?,
            flight(topology.side_distance_km(Side::B), cfg)?,
        ];
        let survival = Side::BOTH.map(|s| {
            cfg.attenuation
                .transmittance(topology.side_distance_km(s))
        });
        let epps_state = BellDiagonalState::PERFECT
            .depolarize(cfg.epps_depolarizing_lambda)
            .map_err(|e| EngineError::Invariant(e.to_string()))?;
        let node = |side| Node {
            side,
            memories: MemoryBank::new(cfg.memories_per_node),
            success_map: SuccessMap::new(),
            photon_index: 0,
            interval: None,
            emitted: BTreeMap::new(),
            early: BTreeMap::new(),
            abandoned: 0,
            established: 0,
            stopped: false,
            rng: RandomStream::derive(seed, &stream_name(cfg, Entity::Node(side))),
        };
        Ok(MsmWorld {
            cfg: cfg.clone(),
            seed,
            side_flight,
            cross_flight: flight(cfg.node_separation_km, cfg)?,
            epps_state,
            source: Source {
                interval: cfg.epps_interval(),
                round: 0,
                stopped: false,
                rng: RandomStream::derive(seed, &stream_name(cfg, Entity::Epps)),
                survival,
            },
            nodes: [node(Side::A), node(Side::B)],
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

    pub fn success_map(&self, side: Side) -> &SuccessMap {
        &self.nodes[side.index()].success_map
    }

    pub fn photon_index(&self, side: Side) -> u64 {
        self.nodes[side.index()].photon_index
    }

    pub fn established(&self, side: Side) -> u64 {
        self.nodes[side.index()].established
    }

    /// Ticked rounds for which no BsmResult was sent: memory photons still
    /// waiting for their source photon, or dropped when the node stopped.
    pub fn unreported_rounds(&self, side: Side) -> u64 {
        let node = &self.nodes[side.index()];
        node.emitted.len() as u64 + node.abandoned
    }

    pub fn source_rounds(&self) -> u64 {
        self.source.round
    }

    pub fn source_stopped(&self) -> bool {
        self.source.stopped
    }

    /// Fingerprints of every stream this world owns.
    pub fn stream_fingerprints(&self) -> [u64; 3] {
        [
            self.source.rng.fingerprint(),
            self.nodes[0].rng.fingerprint(),
            self.nodes[1].rng.fingerprint(),
        ]
    }

    fn send(
        &mut self,
        scheduler: &mut Scheduler<Entity, MsmEvent>,
        from: Entity,
        to: Entity,
        delay: SimTime,
        message: ClassicalMessage,
    ) {
        self.metrics.record(MetricEvent::MessageSent {
            kind: message.kind(),
            from,
            to,
        });
        scheduler.schedule_in(delay, to, MsmEvent::Deliver { from, message });
    }

    fn source_emit(&mut self, scheduler: &mut Scheduler<Entity, MsmEvent>) {
        if self.source.stopped {
            return;
        }
        self.source.round += 1;
        let round = self.source.round;
        self.metrics.record(MetricEvent::EppsRound);
        for side in Side::BOTH {
            let lost = !self.source.rng.bernoulli(self.source.survival[side.index()]);
            scheduler.schedule_in(
                self.side_flight[side.index()],
                Entity::Node(side),
                MsmEvent::EppsPhoton { round, lost },
            );
        }
        scheduler.schedule_in(self.source.interval, Entity::Epps, MsmEvent::EppsEmit);
    }

    fn tick(&mut self, side: Side, scheduler: &mut Scheduler<Entity, MsmEvent>) -> Result<(), EngineError> {
        let now = scheduler.now();
        let node = &mut self.nodes[side.index()];
        if node.stopped {
            return Ok(());
        }
        let interval = node
            .interval
            .ok_or_else(|| EngineError::Invariant(format!("node {side} ticked before timing notification")))?;
        node.photon_index += 1;
        let round = node.photon_index;
        match node.memories.emit(round, now) {
            Some(mem) => {
                node.emitted.insert(round, mem);
                if let Some(lost) = node.early.remove(&round) {
                    self.attempt(side, round, lost, scheduler)?;
                }
            }
            None => {
                // The source photon of this round is discarded, but the
                // partner still hears about the round.
                node.early.remove(&round);
                self.send(
                    scheduler,
                    Entity::Node(side),
                    Entity::Node(side.partner()),
                    self.cross_flight,
                    ClassicalMessage::BsmResult {
                        success: false,
                        correction: CorrectionBit::ZERO,
                        photon_index: round,
                    },
                );
            }
        }
        scheduler.schedule_in(interval, Entity::Node(side), MsmEvent::Tick);
        Ok(())
    }

    fn source_photon(
        &mut self,
        side: Side,
        round: u64,
        lost: bool,
        scheduler: &mut Scheduler<Entity, MsmEvent>,
    ) -> Result<(), EngineError> {
        let node = &mut self.nodes[side.index()];
        if node.stopped {
            return Ok(());
        }
        if round > node.photon_index {
            node.early.insert(round, lost);
            return Ok(());
        }
        if node.emitted.contains_key(&round) {
            self.attempt(side, round, lost, scheduler)?;
        }
        Ok(())
    }

    /// One internal BSM on the memory photon and the source photon of `round`.
    fn attempt(
        &mut self,
        side: Side,
        round: u64,
        lost: bool,
        scheduler: &mut Scheduler<Entity, MsmEvent>,
    ) -> Result<(), EngineError> {
        let now = scheduler.now();
        let node = &mut self.nodes[side.index()];
        let mem = node
            .emitted
            .remove(&round)
            .ok_or_else(|| EngineError::Invariant(format!("node {side}: no memory photon for round {round}")))?;
        let outcome = bsm_attempt(!lost, self.cfg.p_bsa, &mut node.rng);
        if outcome.success {
            let half_link = BellDiagonalState::PERFECT.swap_compose(&self.epps_state);
            node.memories.lock(mem, half_link, now)?;
            node.success_map.insert(round, mem, outcome.correction)?;
        } else {
            node.memories.reset(mem, now)?;
        }
        self.metrics.record(MetricEvent::BsmAttempt {
            side,
            success: outcome.success,
        });
        let message = ClassicalMessage::BsmResult {
            success: outcome.success,
            correction: outcome.correction,
            photon_index: round,
        };
        self.send(
            scheduler,
            Entity::Node(side),
            Entity::Node(side.partner()),
            self.cross_flight,
            message,
        );
        Ok(())
    }

    fn partner_result(
        &mut self,
        side: Side,
        success: bool,
        partner_correction: CorrectionBit,
        round: u64,
        scheduler: &mut Scheduler<Entity, MsmEvent>,
    ) -> Result<(), EngineError> {
        let now = scheduler.now();
        let node = &mut self.nodes[side.index()];
        if node.stopped {
            return Ok(());
        }
        // One result per round, in round order.
        if let Some(oldest) = node.success_map.oldest().filter(|k| *k < round) {
            return Err(EngineError::Invariant(format!(
                "node {side}: partner result for round {round} overtook round {oldest}"
            )));
        }
        let Some((mem, local_correction)) = node.success_map.remove(round) else {
            return Ok(());
        };
        if !success {
            return node.memories.reset(mem, now);
        }

        let correction = correction_for(local_correction, partner_correction);
        let applied = if side.applies_corrections() {
            correction
        } else {
            PauliLabel::I
        };
        let state = BellDiagonalState::PERFECT
            .swap_compose(&self.epps_state)
            .swap_compose(&BellDiagonalState::PERFECT);
        let record = self
            .pairs
            .entry(round)
            .or_insert_with(|| PairRecord::new(round, state, correction));
        let local_view = record.raw_state().apply_pauli(applied);
        record.record_side(side, Some(local_correction), applied, now);
        let finished = record.final_state.filter(|_| record.is_complete());

        node.memories.establish(mem, local_view, now)?;
        // The pair is handed off; the memory is free for the next round.
        node.memories.reset(mem, now)?;
        node.established += 1;

        if let Some(final_state) = finished {
            self.completed += 1;
            self.metrics.record(MetricEvent::PairEstablished {
                fidelity: final_state.fidelity(),
            });
        }
        if node.established >= self.cfg.target_pairs {
            self.stop_node(side, scheduler);
        }
        Ok(())
    }

    fn stop_node(&mut self, side: Side, scheduler: &mut Scheduler<Entity, MsmEvent>) {
        let now = scheduler.now();
        let node = &mut self.nodes[side.index()];
        node.stopped = true;
        node.abandoned = node.emitted.len() as u64;
        node.success_map.clear();
        node.emitted.clear();
        node.early.clear();
        node.memories.reset_all(now);
        self.send(
            scheduler,
            Entity::Node(side),
            Entity::Epps,
            self.side_flight[side.index()],
            ClassicalMessage::StopEppsEmission,
        );
    }
}

impl Handler for MsmWorld {
    type Target = Entity;
    type Payload = MsmEvent;

    fn handle(
        &mut self,
        event: Event<Entity, MsmEvent>,
        scheduler: &mut Scheduler<Entity, MsmEvent>,
    ) -> Result<(), EngineError> {
        if let MsmEvent::Deliver { from, message } = event.payload {
            self.metrics.record(MetricEvent::MessageDelivered {
                kind: message.kind(),
                from,
                to: event.target,
            });
        }
        match (event.target, event.payload) {
            (Entity::Epps, MsmEvent::EppsEmit) => {
                self.source_emit(scheduler);
                Ok(())
            }
            (Entity::Epps, MsmEvent::Deliver { message: ClassicalMessage::StopEppsEmission, .. }) => {
                self.source.stopped = true;
                Ok(())
            }
            (Entity::Node(side), MsmEvent::Tick) => self.tick(side, scheduler),
            (Entity::Node(side), MsmEvent::EppsPhoton { round, lost }) => {
                self.source_photon(side, round, lost, scheduler)
            }
            (
                Entity::Node(side),
                MsmEvent::Deliver {
                    message: ClassicalMessage::EppsTimingNotification { first_emission, interval },
                    ..
                },
            ) => {
                let node = &mut self.nodes[side.index()];
                if node.interval.is_some() {
                    return Err(EngineError::Invariant(format!("node {side} notified twice")));
                }
                node.interval = Some(interval);
                // The memory photon meets the source photon of the same round.
                scheduler.schedule(
                    first_emission + self.side_flight[side.index()],
                    Entity::Node(side),
                    MsmEvent::Tick,
                )?;
                Ok(())
            }
            (
                Entity::Node(side),
                MsmEvent::Deliver {
                    message: ClassicalMessage::BsmResult { success, correction, photon_index },
                    ..
                },
            ) => self.partner_result(side, success, correction, photon_index, scheduler),
            (target, payload) => Err(EngineError::Invariant(format!(
                "{target} cannot handle {}",
                payload.tag()
            ))),
        }
    }
}

impl LinkWorld for MsmWorld {
    fn start(&mut self, scheduler: &mut Scheduler<Entity, MsmEvent>) -> Result<(), EngineError> {
        if self.cfg.target_pairs == 0 {
            return Ok(());
        }
        let first_emission = SimTime::ZERO;
        for side in Side::BOTH {
            let message = ClassicalMessage::EppsTimingNotification {
                first_emission,
                interval: self.source.interval,
            };
            self.send(
                scheduler,
                Entity::Epps,
                Entity::Node(side),
                self.side_flight[side.index()],
                message,
            );
        }
        scheduler.schedule(first_emission, Entity::Epps, MsmEvent::EppsEmit)?;
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
            for (round, mem) in node.emitted.iter() {
                let m = node.memories.get(*mem).expect("bank memory");
                if m.status != MemoryStatus::EmittedAwaitingLocalBsm || m.bound_photon_index != Some(*round) {
                    return fail(format!("node {}: emitted memory {mem} out of sync", node.side));
                }
            }
            for mem in node.success_map.memories() {
                if node.memories.get(mem).map(|m| m.status) != Some(MemoryStatus::LockedAwaitingPartner) {
                    return fail(format!("node {}: success map holds unlocked memory {mem}", node.side));
                }
            }
            let locked = node.memories.count(MemoryStatus::LockedAwaitingPartner);
            if locked != node.success_map.len() {
                return fail(format!("node {}: {locked} locked memories but {} entries", node.side, node.success_map.len()));
            }
            let reported = self.metrics.sent(
                MessageKind::BsmResult,
                Entity::Node(node.side),
                Entity::Node(node.side.partner()),
            );
            if reported + self.unreported_rounds(node.side) != node.photon_index {
                return fail(format!(
                    "node {}: {reported} results for {} rounds",
                    node.side, node.photon_index
                ));
            }
            if self.metrics.successes(node.side) > self.metrics.attempts(node.side) {
                return fail(format!("node {}: more successes than attempts", node.side));
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

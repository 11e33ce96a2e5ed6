//! Protocol entities for the three link architectures.
//!
//! MSM runs live in [`msm`]; MIM and MM share the externally heralded
//! machinery in [`heralded`], differing only in where the BSA sits.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Architecture, LinkConfig};
use crate::engine::{run_until, travel_time, EngineError, Handler, RunOutcome, Scheduler, SimTime};
use crate::metrics::SimResult;
use crate::quantum::{BellDiagonalState, CorrectionBit, PauliLabel};

pub mod heralded;
pub mod memory;
pub mod msm;

pub use heralded::HeraldedWorld;
pub use memory::{MemoryBank, MemoryQubit, MemoryStatus, SuccessMap};
pub use msm::MsmWorld;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::A, Side::B];

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }

    pub fn partner(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    /// Node B has the higher address and owns Pauli corrections.
    pub fn applies_corrections(self) -> bool {
        self == Side::B
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "A",
            Side::B => "B",
        })
    }
}

/// Addressable protocol entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Entity {
    Node(Side),
    Epps,
    Bsa,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Node(side) => write!(f, "Node{side}"),
            Entity::Epps => f.write_str("EPPS"),
            Entity::Bsa => f.write_str("BSA"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTopology {
    pub architecture: Architecture,
    pub node_separation_km: f64,
    pub epps_or_bsa_position: f64,
}

impl LinkTopology {
    /// Fiber length between a node and the midpoint device.
    pub fn side_distance_km(&self, side: Side) -> f64 {
        match side {
            Side::A => self.node_separation_km * self.epps_or_bsa_position,
            Side::B => self.node_separation_km * (1.0 - self.epps_or_bsa_position),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    EppsTimingNotification,
    BsmResult,
    StopEppsEmission,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::EppsTimingNotification => "EppsTimingNotification",
            MessageKind::BsmResult => "BsmResult",
            MessageKind::StopEppsEmission => "StopEppsEmission",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicalMessage {
    EppsTimingNotification {
        first_emission: SimTime,
        interval: SimTime,
    },
    BsmResult {
        success: bool,
        /// Zero unless `success`.
        correction: CorrectionBit,
        photon_index: u64,
    },
    StopEppsEmission,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("photon index {0} is negative")]
pub struct NegativePhotonIndex(pub i64);

impl ClassicalMessage {
    /// Decode a result from its signed wire fields.
    pub fn bsm_result(
        success: bool,
        correction: CorrectionBit,
        photon_index: i64,
    ) -> Result<Self, NegativePhotonIndex> {
        let photon_index = u64::try_from(photon_index).map_err(|_| NegativePhotonIndex(photon_index))?;
        Ok(ClassicalMessage::BsmResult {
            success,
            correction: if success { correction } else { CorrectionBit::ZERO },
            photon_index,
        })
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            ClassicalMessage::EppsTimingNotification { .. } => MessageKind::EppsTimingNotification,
            ClassicalMessage::BsmResult { .. } => MessageKind::BsmResult,
            ClassicalMessage::StopEppsEmission => MessageKind::StopEppsEmission,
        }
    }
}

/// Per-pair bookkeeping written by both nodes as they establish.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    /// MSM round or heralded attempt id.
    pub key: u64,
    /// State the pair holds once corrected.
    pub state: BellDiagonalState,
    /// Pauli frame the measurement outcomes left the pair in.
    pub frame: PauliLabel,
    pub corrections: [Option<CorrectionBit>; 2],
    pub applied: [Option<PauliLabel>; 2],
    pub established_at: [Option<SimTime>; 2],
    pub final_state: Option<BellDiagonalState>,
}

impl PairRecord {
    fn new(key: u64, state: BellDiagonalState, frame: PauliLabel) -> Self {
        PairRecord {
            key,
            state,
            frame,
            corrections: [None; 2],
            applied: [None; 2],
            established_at: [None; 2],
            final_state: None,
        }
    }

    /// State before any correction.
    pub fn raw_state(&self) -> BellDiagonalState {
        self.state.apply_pauli(self.frame)
    }

    pub fn is_complete(&self) -> bool {
        self.established_at.iter().all(Option::is_some)
    }

    /// Time the later node finished.
    pub fn completed_at(&self) -> Option<SimTime> {
        Some(self.established_at[0]?.max(self.established_at[1]?))
    }

    fn record_side(&mut self, side: Side, correction: Option<CorrectionBit>, applied: PauliLabel, now: SimTime) {
        let i = side.index();
        self.corrections[i] = correction;
        self.applied[i] = Some(applied);
        self.established_at[i] = Some(now);
        if self.is_complete() {
            let state = self
                .applied
                .iter()
                .flatten()
                .fold(self.raw_state(), |s, p| s.apply_pauli(*p));
            self.final_state = Some(state);
        }
    }

    /// The applied Paulis undo the frame, and only one node acted.
    fn check(&self) -> Result<(), EngineError> {
        let [Some(a), Some(b)] = self.applied else {
            return Ok(());
        };
        let fail = |why: &str| Err(EngineError::Invariant(format!("pair {}: {why}", self.key)));
        if a.compose(b) != self.frame {
            return fail("corrections do not undo the measurement frame");
        }
        if a != PauliLabel::I && b != PauliLabel::I {
            return fail("both nodes applied a correction");
        }
        let final_state = self.final_state.expect("complete record");
        let drift = final_state
            .components()
            .iter()
            .zip(self.state.components())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if drift > 1e-12 {
            return fail("corrected state differs from the generated state");
        }
        Ok(())
    }
}

/// Shared propagation helper.
pub(crate) fn flight(distance_km: f64, cfg: &LinkConfig) -> Result<SimTime, EngineError> {
    travel_time(distance_km, cfg.c_fiber_km_s)
}

/// Name of an entity's random stream. Architecture and memory count are part
/// of the name so sweeps over either never share a stream.
pub fn stream_name(cfg: &LinkConfig, entity: Entity) -> String {
    format!(
        "{}/m{}/{}",
        cfg.architecture.as_str(),
        cfg.memories_per_node,
        entity
    )
}

/// Hooks every link world exposes to the driver.
pub trait LinkWorld: Handler<Target = Entity> {
    fn start(&mut self, scheduler: &mut Scheduler<Entity, Self::Payload>) -> Result<(), EngineError>;

    fn pairs_completed(&self) -> u64;

    fn target_pairs(&self) -> u64;

    fn result(&self, outcome: RunOutcome) -> SimResult;

    fn pair_records(&self) -> Vec<PairRecord>;

    /// Cross-entity consistency checks; called after every run.
    fn check_invariants(&self) -> Result<(), EngineError>;
}

/// A world plus its event queue.
pub struct Simulation<W: LinkWorld> {
    pub world: W,
    pub scheduler: Scheduler<Entity, W::Payload>,
    horizon: SimTime,
    outcome: Option<RunOutcome>,
}

impl<W: LinkWorld> Simulation<W> {
    pub fn new(mut world: W, horizon: SimTime) -> Result<Self, EngineError> {
        let mut scheduler = Scheduler::new();
        world.start(&mut scheduler)?;
        Ok(Simulation {
            world,
            scheduler,
            horizon,
            outcome: None,
        })
    }

    /// Run to the target pair count or the horizon.
    pub fn run(&mut self, trace: Option<&mut dyn Write>) -> Result<RunOutcome, EngineError> {
        let outcome = run_until(
            &mut self.world,
            &mut self.scheduler,
            Some(self.horizon),
            |w: &W| w.pairs_completed() >= w.target_pairs(),
            trace,
        )?;
        self.world.check_invariants()?;
        self.outcome = Some(outcome);
        Ok(outcome)
    }

    /// Keep dispatching until the queue is empty or the horizon is hit.
    pub fn drain(&mut self) -> Result<RunOutcome, EngineError> {
        let outcome = run_until(
            &mut self.world,
            &mut self.scheduler,
            Some(self.horizon),
            |_| false,
            None,
        )?;
        self.world.check_invariants()?;
        Ok(outcome)
    }

    pub fn result(&self) -> SimResult {
        let outcome = self
            .outcome
            .unwrap_or(RunOutcome::Exhausted(self.scheduler.now()));
        self.world.result(outcome)
    }
}

/// Build and run the configured architecture with one replication seed.
pub fn simulate(
    cfg: &LinkConfig,
    seed: u64,
    trace: Option<&mut dyn Write>,
) -> Result<SimResult, EngineError> {
    match cfg.architecture {
        Architecture::Msm => {
            let mut sim = Simulation::new(MsmWorld::new(cfg, seed)?, cfg.horizon())?;
            sim.run(trace)?;
            Ok(sim.result())
        }
        Architecture::Mim | Architecture::Mm => {
            let mut sim = Simulation::new(HeraldedWorld::new(cfg, seed)?, cfg.horizon())?;
            sim.run(trace)?;
            Ok(sim.result())
        }
    }
}

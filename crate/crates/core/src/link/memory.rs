//! Node memories and the table of locally successful attempts.

use std::collections::BTreeMap;
use std::fmt;

use crate::engine::{EngineError, SimTime};
use crate::metrics::OccupancyTracker;
use crate::quantum::{BellDiagonalState, CorrectionBit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemoryStatus {
    Free,
    EmittedAwaitingLocalBsm,
    LockedAwaitingPartner,
    Established,
}

impl MemoryStatus {
    /// Allowed moves. Heralded links jump from emission straight to
    /// Established because the BSA result settles both sides at once.
    pub fn can_move_to(self, next: MemoryStatus) -> bool {
        use MemoryStatus::*;
        matches!(
            (self, next),
            (Free, EmittedAwaitingLocalBsm)
                | (EmittedAwaitingLocalBsm, Free)
                | (EmittedAwaitingLocalBsm, LockedAwaitingPartner)
                | (EmittedAwaitingLocalBsm, Established)
                | (LockedAwaitingPartner, Free)
                | (LockedAwaitingPartner, Established)
                | (Established, Free)
        )
    }
}

impl fmt::Display for MemoryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQubit {
    pub id: u32,
    pub status: MemoryStatus,
    pub bound_photon_index: Option<u64>,
    pub pair_state: Option<BellDiagonalState>,
}

impl MemoryQubit {
    fn new(id: u32) -> Self {
        MemoryQubit {
            id,
            status: MemoryStatus::Free,
            bound_photon_index: None,
            pair_state: None,
        }
    }

    fn is_consistent(&self) -> bool {
        match self.status {
            MemoryStatus::Free => self.bound_photon_index.is_none() && self.pair_state.is_none(),
            MemoryStatus::EmittedAwaitingLocalBsm | MemoryStatus::LockedAwaitingPartner => {
                self.bound_photon_index.is_some()
            }
            MemoryStatus::Established => self.pair_state.is_some(),
        }
    }
}

/// The memories of one node.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    memories: Vec<MemoryQubit>,
    occupancy: OccupancyTracker,
    established_total: u64,
}

impl MemoryBank {
    pub fn new(count: u32) -> Self {
        MemoryBank {
            memories: (0..count).map(MemoryQubit::new).collect(),
            occupancy: OccupancyTracker::default(),
            established_total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.memories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memories.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&MemoryQubit> {
        self.memories.get(id as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryQubit> {
        self.memories.iter()
    }

    pub fn free_count(&self) -> usize {
        self.count(MemoryStatus::Free)
    }

    pub fn count(&self, status: MemoryStatus) -> usize {
        self.memories.iter().filter(|m| m.status == status).count()
    }

    pub fn occupancy(&self) -> &OccupancyTracker {
        &self.occupancy
    }

    /// Number of Established transitions so far.
    pub fn established_total(&self) -> u64 {
        self.established_total
    }

    /// Lowest-id Free memory emits and binds `photon_index`.
    pub fn emit(&mut self, photon_index: u64, now: SimTime) -> Option<u32> {
        let id = self.memories.iter().find(|m| m.status == MemoryStatus::Free)?.id;
        self.move_to(id, MemoryStatus::EmittedAwaitingLocalBsm, now)
            .expect("free memory can emit");
        self.memories[id as usize].bound_photon_index = Some(photon_index);
        Some(id)
    }

    /// Hold a locally heralded memory together with its half-link state.
    pub fn lock(&mut self, id: u32, half_link: BellDiagonalState, now: SimTime) -> Result<(), EngineError> {
        self.move_to(id, MemoryStatus::LockedAwaitingPartner, now)?;
        self.memories[id as usize].pair_state = Some(half_link);
        Ok(())
    }

    pub fn establish(&mut self, id: u32, state: BellDiagonalState, now: SimTime) -> Result<(), EngineError> {
        self.move_to(id, MemoryStatus::Established, now)?;
        self.memories[id as usize].pair_state = Some(state);
        self.established_total += 1;
        Ok(())
    }

    /// Back to Free from any busy status.
    pub fn reset(&mut self, id: u32, now: SimTime) -> Result<(), EngineError> {
        self.move_to(id, MemoryStatus::Free, now)
    }

    /// Free every busy memory.
    pub fn reset_all(&mut self, now: SimTime) {
        for id in 0..self.memories.len() as u32 {
            if self.memories[id as usize].status != MemoryStatus::Free {
                self.move_to(id, MemoryStatus::Free, now)
                    .expect("busy memory can reset");
            }
        }
    }

    fn move_to(&mut self, id: u32, next: MemoryStatus, now: SimTime) -> Result<(), EngineError> {
        let mem = self
            .memories
            .get_mut(id as usize)
            .ok_or_else(|| EngineError::Invariant(format!("no memory {id}")))?;
        if !mem.status.can_move_to(next) {
            return Err(EngineError::Invariant(format!(
                "memory {id}: illegal transition {} -> {next}",
                mem.status
            )));
        }
        mem.status = next;
        if next == MemoryStatus::Free {
            mem.bound_photon_index = None;
            mem.pair_state = None;
        }
        let busy = self.memories.len() - self.free_count();
        self.occupancy.set_busy(busy as u32, now);
        Ok(())
    }

    pub fn check(&self) -> Result<(), EngineError> {
        match self.memories.iter().find(|m| !m.is_consistent()) {
            None => Ok(()),
            Some(m) => Err(EngineError::Invariant(format!("memory {} inconsistent: {m:?}", m.id))),
        }
    }
}

/// Locally successful attempts awaiting the partner's result, by photon index.
#[derive(Debug, Clone, Default)]
pub struct SuccessMap {
    entries: BTreeMap<u64, (u32, CorrectionBit)>,
    last_key: Option<u64>,
}

impl SuccessMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, photon_index: u64, memory: u32, correction: CorrectionBit) -> Result<(), EngineError> {
        if self.last_key.is_some_and(|k| photon_index <= k) {
            return Err(EngineError::Invariant(format!(
                "success map key {photon_index} not above {:?}",
                self.last_key
            )));
        }
        if self.entries.values().any(|(m, _)| *m == memory) {
            return Err(EngineError::Invariant(format!("memory {memory} already in success map")));
        }
        self.last_key = Some(photon_index);
        self.entries.insert(photon_index, (memory, correction));
        Ok(())
    }

    pub fn get(&self, photon_index: u64) -> Option<(u32, CorrectionBit)> {
        self.entries.get(&photon_index).copied()
    }

    pub fn remove(&mut self, photon_index: u64) -> Option<(u32, CorrectionBit)> {
        self.entries.remove(&photon_index)
    }

    pub fn oldest(&self) -> Option<u64> {
        self.entries.keys().next().copied()
    }

    pub fn clear(&mut self) -> Vec<u32> {
        std::mem::take(&mut self.entries)
            .into_values()
            .map(|(m, _)| m)
            .collect()
    }

    pub fn memories(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.values().map(|(m, _)| *m)
    }
}

//! Deterministic discrete-event scheduler.
//!
//! Time is an integer number of picoseconds. Events are dispatched in
//! `(time, sequence)` order where `sequence` is a global insertion counter, so
//! simultaneous events run in the order they were scheduled. Randomness comes
//! from named [`RandomStream`]s derived from a base seed.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;
use std::ops::{Add, Sub};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Name of the generator recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3), SHA-256 stream derivation";

const PS_PER_SECOND: f64 = 1e12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("event for {target} scheduled at {at} ps, before the clock ({now} ps)")]
    ScheduledInPast { target: String, at: u64, now: u64 },
    #[error("invalid travel parameters: distance {distance_km} km at {speed_km_s} km/s")]
    InvalidTravel { distance_km: f64, speed_km_s: f64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("trace output failed: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / PS_PER_SECOND
    }

    /// Period of a clock running at `hz`, rounded to the nearest picosecond.
    pub fn period_of(hz: f64) -> SimTime {
        SimTime((PS_PER_SECOND / hz + 0.5).floor() as u64)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Time of flight over `distance_km` of fiber, rounded half-up to the picosecond.
pub fn travel_time(distance_km: f64, c_fiber_km_s: f64) -> Result<SimTime, EngineError> {
    if !(c_fiber_km_s > 0.0 && distance_km.is_finite() && distance_km >= 0.0) {
        return Err(EngineError::InvalidTravel {
            distance_km,
            speed_km_s: c_fiber_km_s,
        });
    }
    let ps = distance_km / c_fiber_km_s * PS_PER_SECOND;
    Ok(SimTime((ps + 0.5).floor() as u64))
}

/// Short label used in event traces.
pub trait TraceTag {
    fn tag(&self) -> &'static str;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<K, P> {
    pub time: SimTime,
    pub sequence: u64,
    pub target: K,
    pub payload: P,
}

struct Queued<K, P>(Event<K, P>);

impl<K, P> PartialEq for Queued<K, P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K, P> Eq for Queued<K, P> {}

impl<K, P> PartialOrd for Queued<K, P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K, P> Ord for Queued<K, P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.time, self.0.sequence).cmp(&(other.0.time, other.0.sequence))
    }
}

pub struct Scheduler<K, P> {
    now: SimTime,
    next_sequence: u64,
    queue: BinaryHeap<Reverse<Queued<K, P>>>,
}

impl<K: fmt::Display, P> Scheduler<K, P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_sequence: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(q)| q.0.time)
    }

    /// Enqueue at an absolute time. Returns the assigned sequence number.
    pub fn schedule(&mut self, time: SimTime, target: K, payload: P) -> Result<u64, EngineError> {
        if time < self.now {
            return Err(EngineError::ScheduledInPast {
                target: target.to_string(),
                at: time.as_ps(),
                now: self.now.as_ps(),
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Reverse(Queued(Event {
            time,
            sequence,
            target,
            payload,
        })));
        Ok(sequence)
    }

    /// Enqueue relative to the current clock; cannot land in the past.
    pub fn schedule_in(&mut self, delay: SimTime, target: K, payload: P) -> u64 {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Reverse(Queued(Event {
            time: self.now + delay,
            sequence,
            target,
            payload,
        })));
        sequence
    }

    /// Remove the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<Event<K, P>> {
        let Reverse(Queued(event)) = self.queue.pop()?;
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        Some(event)
    }
}

impl<K: fmt::Display, P> Default for Scheduler<K, P> {
    fn default() -> Self {
        Self::new()
    }
}

/// An entity world driven by the event loop.
pub trait Handler {
    type Target: fmt::Display + Copy;
    type Payload: TraceTag;

    fn handle(
        &mut self,
        event: Event<Self::Target, Self::Payload>,
        scheduler: &mut Scheduler<Self::Target, Self::Payload>,
    ) -> Result<(), EngineError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// Stop condition held at this time.
    Completed(SimTime),
    /// Queue ran dry first.
    Exhausted(SimTime),
    /// Next event lay beyond the horizon.
    Horizon(SimTime),
}

impl RunOutcome {
    pub fn time(self) -> SimTime {
        match self {
            RunOutcome::Completed(t) | RunOutcome::Exhausted(t) | RunOutcome::Horizon(t) => t,
        }
    }

    pub fn is_completed(self) -> bool {
        matches!(self, RunOutcome::Completed(_))
    }
}

/// Pop and dispatch events until `stop` holds, the queue empties, or the next
/// event lies past `horizon`.
///
/// When `trace` is given, every dispatched event is written as one line
/// `time_ps target tag` before its handler runs.
pub fn run_until<H, F>(
    world: &mut H,
    scheduler: &mut Scheduler<H::Target, H::Payload>,
    horizon: Option<SimTime>,
    mut stop: F,
    mut trace: Option<&mut dyn Write>,
) -> Result<RunOutcome, EngineError>
where
    H: Handler,
    F: FnMut(&H) -> bool,
{
    if stop(world) {
        return Ok(RunOutcome::Completed(scheduler.now()));
    }
    loop {
        match scheduler.peek_time() {
            None => return Ok(RunOutcome::Exhausted(scheduler.now())),
            Some(t) if horizon.is_some_and(|h| t > h) => {
                return Ok(RunOutcome::Horizon(horizon.unwrap_or(t)));
            }
            Some(_) => {}
        }
        let event = scheduler.pop().expect("peeked event");
        if let Some(w) = trace.as_deref_mut() {
            writeln!(w, "{} {} {}", event.time, event.target, event.payload.tag())?;
        }
        world.handle(event, scheduler)?;
        if stop(world) {
            return Ok(RunOutcome::Completed(scheduler.now()));
        }
    }
}

/// Reproducible random stream owned by one entity.
///
/// The 256-bit ChaCha8 key is the SHA-256 digest of the base seed and the
/// stream name, so streams are stable across platforms and independent of
/// creation order.
#[derive(Clone)]
pub struct RandomStream {
    seed: u64,
    fingerprint: u64,
    rng: ChaCha8Rng,
    draws: u64,
}

impl RandomStream {
    pub fn derive(seed: u64, name: &str) -> Self {
        let key = stream_key(seed, name);
        let fingerprint = u64::from_le_bytes(key[..8].try_into().expect("8 bytes"));
        RandomStream {
            seed,
            fingerprint,
            rng: ChaCha8Rng::from_seed(key),
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Leading 64 bits of the derived key, for collision checks.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl fmt::Debug for RandomStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomStream")
            .field("seed", &self.seed)
            .field("fingerprint", &format_args!("{:016x}", self.fingerprint))
            .field("draws", &self.draws)
            .finish()
    }
}

fn stream_key(seed: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"qlink-stream-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

//! Discrete-event simulation of single quantum links in three
//! architectures: a midpoint entangled-photon source with BSAs inside both
//! nodes (MSM), a midpoint BSA (MIM) and a BSA inside one node (MM).
//!
//! The crate is layered bottom-up:
//!
//! * [`quantum`]: Bell-diagonal state algebra and the BSM trial.
//! * [`engine`]: event queue, simulated clock and seeded random streams.
//! * [`link`]: protocol entities for each architecture.
//! * [`metrics`]: counters and the per-run [`metrics::SimResult`].
//! * [`analytic`]: closed-form memory and rate estimates.
//! * [`config`] and [`harness`]: experiment files, sweeps and CSV output.

pub mod analytic;
pub mod config;
pub mod engine;
pub mod harness;
pub mod link;
pub mod metrics;
pub mod quantum;

pub use config::{Architecture, LinkConfig};
pub use engine::{SimTime, RandomStream};
pub use metrics::SimResult;

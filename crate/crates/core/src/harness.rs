//! Replicated runs, memory sweeps, purification experiments and the model
//! report, with their CSV renderings.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{
    bsa_success_probability, fiber_transmittance, memory_occupancy, min_memories, saturated_pair_rate,
    Attenuation, ModelError, REFERENCE_ATTENUATION_LENGTH_KM,
};
use crate::config::{Architecture, ConfigError, LinkConfig};
use crate::engine::{EngineError, RandomStream};
use crate::link::{stream_name, Entity, HeraldedWorld, LinkWorld, MessageKind, MsmWorld, Side, Simulation};
use crate::metrics::SimResult;
use crate::quantum::{purify, BellDiagonalState};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no memory values to sweep")]
    EmptySweep,
    #[error("random streams collide: {0} and {1}")]
    StreamCollision(String, String),
    #[error("{architecture} replication {replication}: raw pair generation did not complete ({pairs} of {target} pairs)")]
    RawPairsIncomplete {
        architecture: Architecture,
        replication: u32,
        pairs: u64,
        target: u64,
    },
    #[error("{architecture} replication {replication}: purification round {round} needs at least 2 pairs, {available} available")]
    InsufficientPairs {
        architecture: Architecture,
        replication: u32,
        round: u32,
        available: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Seed of replication `i`.
pub fn replication_seed(base: u64, replication: u32) -> u64 {
    base.wrapping_add(u64::from(replication))
}

fn entities(architecture: Architecture) -> [Entity; 3] {
    let device = match architecture {
        Architecture::Msm => Entity::Epps,
        Architecture::Mim | Architecture::Mm => Entity::Bsa,
    };
    [device, Entity::Node(Side::A), Entity::Node(Side::B)]
}

/// Fail if any two streams used by `runs` share a key.
pub fn check_stream_collisions<'a>(runs: impl IntoIterator<Item = (&'a LinkConfig, u64)>) -> Result<(), HarnessError> {
    let mut seen: HashMap<u64, String> = HashMap::new();
    for (cfg, seed) in runs {
        for entity in entities(cfg.architecture) {
            let name = stream_name(cfg, entity);
            let fp = RandomStream::derive(seed, &name).fingerprint();
            let label = format!("{name}@{seed}");
            if let Some(prev) = seen.insert(fp, label.clone()) {
                return Err(HarnessError::StreamCollision(prev, label));
            }
        }
    }
    Ok(())
}

/// One run of `cfg` with the given replication seed.
pub fn run_with_seed(cfg: &LinkConfig, seed: u64, trace: Option<&mut dyn Write>) -> Result<SimResult, EngineError> {
    crate::link::simulate(cfg, seed, trace)
}

/// One run with the config's own seed.
pub fn run_single(cfg: &LinkConfig) -> Result<SimResult, HarnessError> {
    cfg.validate()?;
    Ok(run_with_seed(cfg, cfg.seed, None)?)
}

/// Run `cfg`, writing the event trace to `path`.
pub fn run_traced(cfg: &LinkConfig, seed: u64, path: &Path) -> Result<SimResult, HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    let result = run_with_seed(cfg, seed, Some(&mut out))?;
    out.flush()?;
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub architecture: Architecture,
    pub separation_km: f64,
    pub memories: u32,
    pub replication: u32,
    pub seed: u64,
    pub result: Result<SimResult, String>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Write one event trace per run into this directory.
    pub trace_dir: Option<PathBuf>,
}

pub fn trace_file_name(architecture: Architecture, memories: u32, replication: u32) -> String {
    format!(
        "trace_{}_m{memories}_r{replication}.txt",
        architecture.as_str().to_ascii_lowercase()
    )
}

/// Every (architecture, memories, replication) run, ordered that way.
pub fn run_sweep(
    cfg: &LinkConfig,
    memory_values: &[u32],
    architectures: &[Architecture],
    options: &SweepOptions,
) -> Result<Vec<SweepRun>, HarnessError> {
    if memory_values.is_empty() {
        return Err(HarnessError::EmptySweep);
    }
    let mut jobs = Vec::new();
    for &architecture in architectures {
        for &memories in memory_values {
            let job_cfg = LinkConfig {
                architecture,
                memories_per_node: memories,
                ..cfg.clone()
            };
            job_cfg.validate()?;
            for replication in 0..cfg.replications {
                jobs.push((job_cfg.clone(), replication));
            }
        }
    }
    check_stream_collisions(
        jobs.iter()
            .map(|(c, r)| (c, replication_seed(cfg.seed, *r))),
    )?;

    let runs = jobs
        .par_iter()
        .map(|(job_cfg, replication)| {
            let seed = replication_seed(cfg.seed, *replication);
            let result = match &options.trace_dir {
                Some(dir) => {
                    let path = dir.join(trace_file_name(job_cfg.architecture, job_cfg.memories_per_node, *replication));
                    run_traced(job_cfg, seed, &path).map_err(|e| e.to_string())
                }
                None => run_with_seed(job_cfg, seed, None).map_err(|e| e.to_string()),
            };
            SweepRun {
                architecture: job_cfg.architecture,
                separation_km: job_cfg.node_separation_km,
                memories: job_cfg.memories_per_node,
                replication: *replication,
                seed,
                result,
            }
        })
        .collect();
    Ok(runs)
}

pub const SWEEP_HEADER: [&str; 18] = [
    "architecture",
    "separation_km",
    "memories",
    "replication",
    "seed",
    "completed",
    "completion_time_ps",
    "pairs",
    "fidelity_mean",
    "messages_total",
    "messages_bsmresult",
    "bsm_attempts_a",
    "bsm_successes_a",
    "bsm_attempts_b",
    "bsm_successes_b",
    "epps_rounds",
    "memory_busy_fraction_a",
    "memory_busy_fraction_b",
];

/// Numeric columns after `completed`, in header order.
fn sweep_values(r: &SimResult) -> [Option<f64>; 12] {
    [
        Some(r.completion_time_ps as f64),
        Some(r.pairs_established as f64),
        r.fidelity_mean,
        Some(r.messages_total() as f64),
        Some(r.messages_of_kind(MessageKind::BsmResult) as f64),
        Some(r.bsm_attempts.a as f64),
        Some(r.bsm_successes.a as f64),
        Some(r.bsm_attempts.b as f64),
        Some(r.bsm_successes.b as f64),
        Some(r.epps_rounds as f64),
        Some(r.memory_busy_fraction.a),
        Some(r.memory_busy_fraction.b),
    ]
}

fn sweep_data_fields(r: &SimResult) -> [String; 12] {
    [
        r.completion_time_ps.to_string(),
        r.pairs_established.to_string(),
        r.fidelity_mean.map(|f| f.to_string()).unwrap_or_default(),
        r.messages_total().to_string(),
        r.messages_of_kind(MessageKind::BsmResult).to_string(),
        r.bsm_attempts.a.to_string(),
        r.bsm_successes.a.to_string(),
        r.bsm_attempts.b.to_string(),
        r.bsm_successes.b.to_string(),
        r.epps_rounds.to_string(),
        r.memory_busy_fraction.a.to_string(),
        r.memory_busy_fraction.b.to_string(),
    ]
}

/// Mean and sample standard deviation; σ is 0 for a single value.
pub fn mean_stddev(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Data rows for each (architecture, memories) group followed by its mean
/// and stddev rows.
pub fn write_sweep_csv<W: Write>(runs: &[SweepRun], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    let mut start = 0;
    while start < runs.len() {
        let head = &runs[start];
        let end = runs[start..]
            .iter()
            .position(|r| r.architecture != head.architecture || r.memories != head.memories)
            .map_or(runs.len(), |p| start + p);
        let group = &runs[start..end];
        let prefix = |replication: String, seed: String| {
            vec![
                head.architecture.as_str().to_string(),
                head.separation_km.to_string(),
                head.memories.to_string(),
                replication,
                seed,
            ]
        };
        for run in group {
            let mut row = prefix(run.replication.to_string(), run.seed.to_string());
            match &run.result {
                Ok(r) => {
                    row.push(r.completed.to_string());
                    row.extend(sweep_data_fields(r));
                }
                Err(_) => {
                    row.push("error".to_string());
                    row.extend(std::iter::repeat_n(String::new(), 12));
                }
            }
            w.write_record(&row)?;
        }

        let ok: Vec<&SimResult> = group.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let completed: Vec<f64> = ok.iter().map(|r| if r.completed { 1.0 } else { 0.0 }).collect();
        let columns: Vec<Vec<f64>> = (0..12)
            .map(|c| ok.iter().filter_map(|r| sweep_values(r)[c]).collect())
            .collect();
        for (label, pick) in [("mean", 0usize), ("stddev", 1usize)] {
            let stat = |vals: &[f64]| mean_stddev(vals).map(|(m, s)| if pick == 0 { m } else { s });
            let mut row = prefix(label.to_string(), String::new());
            row.push(fmt_opt(stat(&completed)));
            row.extend(columns.iter().map(|c| fmt_opt(stat(c))));
            w.write_record(&row)?;
        }
        start = end;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurificationRow {
    pub architecture: Architecture,
    pub separation_km: f64,
    pub memories: u32,
    pub replication: u32,
    pub seed: u64,
    pub round: u32,
    pub pairs_in: usize,
    pub pairs_out: usize,
    pub fidelity_mean: Option<f64>,
}

/// Established pair states of one run, in completion order.
pub fn generate_pairs(cfg: &LinkConfig, seed: u64) -> Result<(SimResult, Vec<BellDiagonalState>), EngineError> {
    fn collect<W: LinkWorld>(world: W, cfg: &LinkConfig) -> Result<(SimResult, Vec<BellDiagonalState>), EngineError> {
        let mut sim = Simulation::new(world, cfg.horizon())?;
        sim.run(None)?;
        let mut records: Vec<_> = sim
            .world
            .pair_records()
            .into_iter()
            .filter(|r| r.is_complete())
            .collect();
        records.sort_by_key(|r| (r.completed_at(), r.key));
        let states = records.iter().filter_map(|r| r.final_state).collect();
        Ok((sim.result(), states))
    }
    match cfg.architecture {
        Architecture::Msm => collect(MsmWorld::new(cfg, seed)?, cfg),
        Architecture::Mim | Architecture::Mm => collect(HeraldedWorld::new(cfg, seed)?, cfg),
    }
}

/// `(pairs_in, pairs_out, mean output fidelity)` of one purification round.
pub type RoundStats = (usize, usize, Option<f64>);

/// Nested recurrence rounds over consecutive pairs. Returns one row per
/// round, round 0 describing the raw pairs.
pub fn purify_rounds(
    raw: Vec<BellDiagonalState>,
    rounds: u32,
    rng: &mut RandomStream,
) -> Result<Vec<RoundStats>, (u32, usize)> {
    let mean = |s: &[BellDiagonalState]| {
        (!s.is_empty()).then(|| s.iter().map(|p| p.fidelity()).sum::<f64>() / s.len() as f64)
    };
    let mut rows = vec![(raw.len(), raw.len(), mean(&raw))];
    let mut pool = raw;
    for round in 1..=rounds {
        if pool.len() < 2 {
            return Err((round, pool.len()));
        }
        let pairs_in = pool.len();
        let next: Vec<BellDiagonalState> = pool
            .chunks_exact(2)
            .filter_map(|c| purify(&c[0], &c[1], rng).state)
            .collect();
        rows.push((pairs_in, next.len(), mean(&next)));
        pool = next;
    }
    Ok(rows)
}

/// Raw pairs for `target_pairs` outputs after `rounds` nested rounds.
pub fn raw_pair_target(target_pairs: u64, rounds: u32) -> u64 {
    target_pairs.saturating_mul(1u64 << rounds.min(63))
}

/// Generate `2^rounds × target_pairs` raw pairs per replication on both MSM
/// and MIM, purify them batch-style, and report every round.
pub fn run_purification_experiment(cfg: &LinkConfig, rounds: u32) -> Result<Vec<PurificationRow>, HarnessError> {
    let mut jobs = Vec::new();
    for architecture in [Architecture::Msm, Architecture::Mim] {
        let job_cfg = LinkConfig {
            architecture,
            target_pairs: raw_pair_target(cfg.target_pairs, rounds),
            purification_rounds: rounds,
            ..cfg.clone()
        };
        job_cfg.validate()?;
        for replication in 0..cfg.replications {
            jobs.push((job_cfg.clone(), replication));
        }
    }
    check_stream_collisions(
        jobs.iter()
            .map(|(c, r)| (c, replication_seed(cfg.seed, *r))),
    )?;
    let per_run: Vec<Result<Vec<PurificationRow>, HarnessError>> = jobs
        .par_iter()
        .map(|(job_cfg, replication)| {
            let seed = replication_seed(cfg.seed, *replication);
            let (result, raw) = generate_pairs(job_cfg, seed)?;
            if !result.completed {
                return Err(HarnessError::RawPairsIncomplete {
                    architecture: job_cfg.architecture,
                    replication: *replication,
                    pairs: result.pairs_established,
                    target: job_cfg.target_pairs,
                });
            }
            let mut rng = RandomStream::derive(
                seed,
                &format!("{}/m{}/purify", job_cfg.architecture.as_str(), job_cfg.memories_per_node),
            );
            let rows = purify_rounds(raw, rounds, &mut rng).map_err(|(round, available)| HarnessError::InsufficientPairs {
                architecture: job_cfg.architecture,
                replication: *replication,
                round,
                available,
            })?;
            Ok(rows
                .into_iter()
                .enumerate()
                .map(|(round, (pairs_in, pairs_out, fidelity_mean))| PurificationRow {
                    architecture: job_cfg.architecture,
                    separation_km: job_cfg.node_separation_km,
                    memories: job_cfg.memories_per_node,
                    replication: *replication,
                    seed,
                    round: round as u32,
                    pairs_in,
                    pairs_out,
                    fidelity_mean,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for run in per_run {
        rows.extend(run?);
    }
    Ok(rows)
}

pub const PURIFICATION_HEADER: [&str; 9] = [
    "architecture",
    "separation_km",
    "memories",
    "replication",
    "seed",
    "round",
    "pairs_in",
    "pairs_out",
    "fidelity_mean",
];

/// Mean and σ of the output fidelity of `round` across replications.
pub fn round_fidelity_stats(rows: &[PurificationRow], architecture: Architecture, round: u32) -> Option<(f64, f64)> {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| r.architecture == architecture && r.round == round)
        .filter_map(|r| r.fidelity_mean)
        .collect();
    mean_stddev(&values)
}

/// Data rows ordered by (architecture, replication, round), then mean and
/// stddev rows per (architecture, round).
pub fn write_purification_csv<W: Write>(rows: &[PurificationRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PURIFICATION_HEADER)?;
    let mut archs: Vec<Architecture> = Vec::new();
    for r in rows {
        if !archs.contains(&r.architecture) {
            archs.push(r.architecture);
        }
    }
    for arch in archs {
        let group: Vec<&PurificationRow> = rows.iter().filter(|r| r.architecture == arch).collect();
        for r in &group {
            w.write_record([
                arch.as_str().to_string(),
                r.separation_km.to_string(),
                r.memories.to_string(),
                r.replication.to_string(),
                r.seed.to_string(),
                r.round.to_string(),
                r.pairs_in.to_string(),
                r.pairs_out.to_string(),
                fmt_opt(r.fidelity_mean),
            ])?;
        }
        let max_round = group.iter().map(|r| r.round).max().unwrap_or(0);
        let head = group[0];
        for round in 0..=max_round {
            let in_round: Vec<&&PurificationRow> = group.iter().filter(|r| r.round == round).collect();
            let pairs_in: Vec<f64> = in_round.iter().map(|r| r.pairs_in as f64).collect();
            let pairs_out: Vec<f64> = in_round.iter().map(|r| r.pairs_out as f64).collect();
            let fidelity: Vec<f64> = in_round.iter().filter_map(|r| r.fidelity_mean).collect();
            for (label, pick) in [("mean", 0usize), ("stddev", 1usize)] {
                let stat = |vals: &[f64]| mean_stddev(vals).map(|(m, s)| if pick == 0 { m } else { s });
                w.write_record([
                    arch.as_str().to_string(),
                    head.separation_km.to_string(),
                    head.memories.to_string(),
                    label.to_string(),
                    String::new(),
                    round.to_string(),
                    fmt_opt(stat(&pairs_in)),
                    fmt_opt(stat(&pairs_out)),
                    fmt_opt(stat(&fidelity)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideModel {
    pub distance_km: f64,
    pub transmittance: f64,
    pub p_success: f64,
    pub occupancy: f64,
    pub min_memories: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBound {
    pub attenuation: Attenuation,
    pub sides: [SideModel; 2],
    pub saturated_pair_rate_hz: f64,
}

impl ModelBound {
    /// Memories a node needs on the more demanding side.
    pub fn min_memories(&self) -> u64 {
        self.sides[0].min_memories.max(self.sides[1].min_memories)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub configured: ModelBound,
    /// Same link under the reference attenuation length, when the config
    /// gives loss in dB/km.
    pub reference: Option<ModelBound>,
}

fn model_bound(cfg: &LinkConfig, attenuation: Attenuation) -> Result<ModelBound, ModelError> {
    let params = Side::BOTH.map(|s| cfg.channel_params(s).with_attenuation(attenuation));
    for p in &params {
        p.validate()?;
    }
    let sides = params.map(|p| SideModel {
        distance_km: p.per_side_distance_km,
        transmittance: fiber_transmittance(&p),
        p_success: bsa_success_probability(&p),
        occupancy: memory_occupancy(&p),
        min_memories: min_memories(&p),
    });
    Ok(ModelBound {
        attenuation,
        sides,
        saturated_pair_rate_hz: saturated_pair_rate(&params[0], &params[1])?,
    })
}

pub fn model_report(cfg: &LinkConfig) -> Result<ModelReport, ModelError> {
    let configured = model_bound(cfg, cfg.attenuation)?;
    let reference = match cfg.attenuation {
        Attenuation::DbPerKm(_) => Some(model_bound(
            cfg,
            Attenuation::AttenuationLengthKm(REFERENCE_ATTENUATION_LENGTH_KM),
        )?),
        Attenuation::AttenuationLengthKm(_) => None,
    };
    Ok(ModelReport { configured, reference })
}

impl ModelReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut bound = |title: &str, b: &ModelBound| {
            let _ = writeln!(out, "[{title}: {}]", b.attenuation);
            for (side, s) in Side::BOTH.iter().zip(&b.sides) {
                let _ = writeln!(
                    out,
                    "side {side}: L = {} km, p_fiber = {:.6}, p_success = {:.6}, occupancy = {:.4}, min_memories = {}",
                    s.distance_km, s.transmittance, s.p_success, s.occupancy, s.min_memories
                );
            }
            let _ = writeln!(out, "min_memories = {}", b.min_memories());
            let _ = writeln!(out, "saturated_pair_rate = {:.6e} pairs/s", b.saturated_pair_rate_hz);
        };
        bound("configured attenuation", &self.configured);
        if let Some(reference) = &self.reference {
            bound("reference attenuation length", reference);
            let (a, b) = (self.configured.min_memories(), reference.min_memories());
            if a != b {
                let _ = writeln!(
                    out,
                    "note: min_memories differs between parametrizations ({a} at {}, {b} at {})",
                    self.configured.attenuation, reference.attenuation
                );
            } else {
                let _ = writeln!(out, "note: both parametrizations give min_memories = {a}");
            }
        }
        out
    }
}

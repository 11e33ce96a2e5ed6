use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qlink::config::{Architecture, LinkConfig};
use qlink::engine::EngineError;
use qlink::harness::{self, HarnessError, SweepOptions};

const EXIT_CONFIG: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(name = "qlink", version, about = "Quantum link architecture simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (TOML).
    config: PathBuf,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count.
    #[arg(long)]
    replications: Option<u32>,
    /// Directory for output files; stdout is used when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write event traces (into --out, or the working directory).
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Single run, result as JSON.
    Run(Common),
    /// Memory sweep with replications, CSV output.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated memory counts.
        #[arg(long, value_delimiter = ',', required = true)]
        memories: Vec<u32>,
        /// Comma-separated architectures (msm, mim, mm).
        #[arg(long, value_delimiter = ',', value_parser = parse_arch)]
        arch: Vec<Architecture>,
    },
    /// Raw pair generation followed by nested purification rounds, CSV output.
    Purify {
        #[command(flatten)]
        common: Common,
        /// Number of purification rounds (default: purification_rounds from the config)
        #[arg(long)]
        rounds: Option<u32>,
    },
    /// Analytic memory bound and saturated rate.
    Model {
        /// Config file (TOML).
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    Architecture::parse(s).ok_or_else(|| format!("unknown architecture `{s}`"))
}

enum Failure {
    Config(String),
    Incomplete(String),
    Invariant(String),
    Other(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::EmptySweep => Failure::Config(e.to_string()),
            HarnessError::RawPairsIncomplete { .. } => Failure::Incomplete(e.to_string()),
            HarnessError::Engine(EngineError::Trace(_)) | HarnessError::Io(_) | HarnessError::Csv(_) => {
                Failure::Other(e.to_string())
            }
            HarnessError::Engine(_) | HarnessError::StreamCollision(..) => Failure::Invariant(e.to_string()),
            HarnessError::Model(_) | HarnessError::InsufficientPairs { .. } => Failure::Other(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn load(common: &Common) -> Result<LinkConfig, Failure> {
    let mut cfg = LinkConfig::load(&common.config).map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(replications) = common.replications {
        cfg.replications = replications;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, file: &str, contents: &[u8]) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(file), contents)?;
        }
        None => io::stdout().write_all(contents)?,
    }
    Ok(())
}

fn trace_dir(common: &Common) -> Result<Option<PathBuf>, Failure> {
    if !common.trace {
        return Ok(None);
    }
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(Some(dir))
}

fn run(common: Common) -> Result<(), Failure> {
    let cfg = load(&common)?;
    let result = match trace_dir(&common)? {
        Some(dir) => harness::run_traced(&cfg, cfg.seed, &dir.join("trace.txt"))?,
        None => harness::run_single(&cfg)?,
    };
    let mut json = serde_json::to_vec_pretty(&result).map_err(|e| Failure::Other(e.to_string()))?;
    json.push(b'\n');
    emit(common.out.as_deref(), "result.json", &json)?;
    if !result.completed {
        return Err(Failure::Incomplete(format!(
            "stopped at {} ps with {} of {} pairs",
            result.completion_time_ps, result.pairs_established, cfg.target_pairs
        )));
    }
    Ok(())
}

fn sweep(common: Common, memories: Vec<u32>, arch: Vec<Architecture>) -> Result<(), Failure> {
    let cfg = load(&common)?;
    let arch = if arch.is_empty() { vec![cfg.architecture] } else { arch };
    let options = SweepOptions {
        trace_dir: trace_dir(&common)?,
    };
    let runs = harness::run_sweep(&cfg, &memories, &arch, &options)?;
    let mut csv = Vec::new();
    harness::write_sweep_csv(&runs, &mut csv)?;
    emit(common.out.as_deref(), "sweep.csv", &csv)?;

    let mut worst = None;
    for run in &runs {
        match &run.result {
            Err(e) => {
                eprintln!("{} M={} replication {}: {e}", run.architecture, run.memories, run.replication);
                worst = Some(Failure::Invariant(e.clone()));
            }
            Ok(r) if !r.completed && worst.is_none() => {
                worst = Some(Failure::Incomplete(format!(
                    "{} M={} replication {} did not complete",
                    run.architecture, run.memories, run.replication
                )));
            }
            Ok(_) => {}
        }
    }
    worst.map_or(Ok(()), Err)
}

fn purify(common: Common, rounds: Option<u32>) -> Result<(), Failure> {
    let cfg = load(&common)?;
    if common.trace {
        eprintln!("--trace is ignored by purify");
    }
    let rounds = rounds.unwrap_or(cfg.purification_rounds);
    let rows = harness::run_purification_experiment(&cfg, rounds)?;
    let mut csv = Vec::new();
    harness::write_purification_csv(&rows, &mut csv)?;
    emit(common.out.as_deref(), "purification.csv", &csv)?;
    for arch in [Architecture::Msm, Architecture::Mim] {
        for round in 0..=rounds {
            if let Some((mean, sd)) = harness::round_fidelity_stats(&rows, arch, round) {
                eprintln!("{arch} round {round}: fidelity {mean:.6} ± {sd:.6}");
            }
        }
    }
    Ok(())
}

fn model(config: PathBuf, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = LinkConfig::load(&config).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let report = harness::model_report(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    emit(out.as_deref(), "model.txt", report.render().as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(common) => run(common),
        Command::Sweep { common, memories, arch } => sweep(common, memories, arch),
        Command::Purify { common, rounds } => purify(common, rounds),
        Command::Model { config, out } => model(config, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Incomplete(msg)) => {
            eprintln!("not completed: {msg}");
            ExitCode::from(EXIT_INCOMPLETE)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(EXIT_INVARIANT)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

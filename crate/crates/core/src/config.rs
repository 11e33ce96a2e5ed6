//! Experiment configuration: loading, defaults, validation and presets.
//!
//! Config files are TOML. Every key of [`LinkConfig`] appears at top level
//! except the attenuation, which is a table holding exactly one of
//! `db_per_km` or `attenuation_length_km`:
//!
//! ```toml
//! architecture = "msm"
//! node_separation_km = 20.0
//! epps_or_bsa_position = 0.5
//! f_epps_hz = 1e6
//! memories_per_node = 8
//! target_pairs = 100
//!
//! [attenuation]
//! db_per_km = 0.2
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::analytic::{Attenuation, ChannelParams};
use crate::engine::SimTime;
use crate::link::{LinkTopology, Side};

pub const DEFAULT_C_FIBER_KM_S: f64 = 208189.0;
pub const DEFAULT_P_BSA: f64 = 0.5;
pub const DEFAULT_REPLICATIONS: u32 = 100;
pub const DEFAULT_HORIZON_PS: u64 = 10_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Msm,
    Mim,
    Mm,
}

impl Architecture {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msm" => Some(Architecture::Msm),
            "mim" => Some(Architecture::Mim),
            "mm" => Some(Architecture::Mm),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Msm => "MSM",
            Architecture::Mim => "MIM",
            Architecture::Mm => "MM",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How MIM/MM nodes fill an emission tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MimEmission {
    /// One free memory emits per tick.
    #[default]
    OnePerTick,
    /// Every free memory emits in the same tick.
    AllFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub architecture: Architecture,
    pub node_separation_km: f64,
    /// Source or BSA location, as a fraction of the separation from node A.
    pub epps_or_bsa_position: f64,
    pub c_fiber_km_s: f64,
    pub attenuation: Attenuation,
    pub f_epps_hz: f64,
    pub memory_emission_hz: f64,
    pub memories_per_node: u32,
    pub p_bsa: f64,
    /// Depolarizing strength applied once per generated pair.
    pub epps_depolarizing_lambda: f64,
    pub target_pairs: u64,
    pub purification_rounds: u32,
    pub seed: u64,
    pub replications: u32,
    pub max_sim_time_ps: u64,
    pub mim_emission: MimEmission,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{}", join_issues(.0))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(issues) => issues,
            ConfigError::Io { .. } => &[],
        }
    }

    fn single(line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError::Invalid(vec![ConfigIssue {
            line,
            message: message.into(),
        }])
    }
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "architecture",
    "node_separation_km",
    "epps_or_bsa_position",
    "c_fiber_km_s",
    "attenuation",
    "f_epps_hz",
    "memory_emission_hz",
    "memories_per_node",
    "p_bsa",
    "epps_depolarizing_lambda",
    "target_pairs",
    "purification_rounds",
    "seed",
    "replications",
    "max_sim_time_ps",
    "mim_emission",
];

const REQUIRED_KEYS: &[&str] = &[
    "architecture",
    "node_separation_km",
    "epps_or_bsa_position",
    "attenuation",
    "f_epps_hz",
    "memories_per_node",
    "target_pairs",
];

const ATTENUATION_KEYS: &[&str] = &["db_per_km", "attenuation_length_km"];

/// Line (1-based) where `key` is assigned inside `[table]`, or at top level.
fn locate_key(text: &str, table: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = Some(line.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim().trim_matches('"');
        let hit = match (table, current.as_deref()) {
            (None, None) => lhs == key,
            (Some(t), Some(c)) => c == t && lhs == key,
            // dotted form: attenuation.db_per_km = ...
            (Some(t), None) => lhs == format!("{t}.{key}"),
            _ => false,
        };
        if hit {
            return Some(i + 1);
        }
    }
    if let Some(t) = table {
        return text
            .lines()
            .position(|l| l.trim().trim_matches(|c| c == '[' || c == ']').trim() == t)
            .map(|i| i + 1);
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Reader<'a> {
    text: &'a str,
    table: &'a Table,
    issues: Vec<ConfigIssue>,
}

impl<'a> Reader<'a> {
    fn issue(&mut self, key: &str, message: String) {
        let line = locate_key(self.text, None, key);
        self.issues.push(ConfigIssue { line, message });
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        match self.table.get(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                self.issue(key, format!("`{key}` must be a number, found {}", other.type_str()));
                None
            }
        }
    }

    fn unsigned(&mut self, key: &str) -> Option<u64> {
        match self.table.get(key)? {
            Value::Integer(v) if *v >= 0 => Some(*v as u64),
            // allow 1e13-style horizons written as floats
            Value::Float(v) if *v >= 0.0 && v.fract() == 0.0 && *v < u64::MAX as f64 => {
                Some(*v as u64)
            }
            other => {
                self.issue(key, format!("`{key}` must be a non-negative integer, found {other}"));
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.issue(key, format!("`{key}` must be a string, found {}", other.type_str()));
                None
            }
        }
    }
}

impl LinkConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Parse, apply defaults and validate. All problems found are reported
    /// together.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            ConfigError::single(line, e.message().trim().to_string())
        })?;
        let mut r = Reader {
            text,
            table: &table,
            issues: Vec::new(),
        };

        for key in table.keys() {
            if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
                r.issue(key, format!("unknown key `{key}`"));
            }
        }
        for key in REQUIRED_KEYS {
            if !table.contains_key(*key) {
                r.issues.push(ConfigIssue {
                    line: None,
                    message: format!("missing required key `{key}`"),
                });
            }
        }

        let architecture = r.string("architecture").and_then(|s| {
            let arch = Architecture::parse(&s);
            if arch.is_none() {
                r.issue("architecture", format!("unknown architecture `{s}` (expected msm, mim or mm)"));
            }
            arch
        });
        let mim_emission = match r.string("mim_emission").as_deref() {
            None => Some(MimEmission::default()),
            Some("one_per_tick") => Some(MimEmission::OnePerTick),
            Some("all_free") => Some(MimEmission::AllFree),
            Some(other) => {
                r.issue("mim_emission", format!("unknown mim_emission `{other}` (expected one_per_tick or all_free)"));
                None
            }
        };
        let attenuation = read_attenuation(&mut r);

        let node_separation_km = r.float("node_separation_km");
        let epps_or_bsa_position = r.float("epps_or_bsa_position");
        let c_fiber_km_s = r.float("c_fiber_km_s").unwrap_or(DEFAULT_C_FIBER_KM_S);
        let f_epps_hz = r.float("f_epps_hz");
        let memory_emission_hz = r.float("memory_emission_hz");
        let memories_per_node = r.unsigned("memories_per_node");
        let p_bsa = r.float("p_bsa").unwrap_or(DEFAULT_P_BSA);
        let lambda = r.float("epps_depolarizing_lambda").unwrap_or(0.0);
        let target_pairs = r.unsigned("target_pairs");
        let purification_rounds = r.unsigned("purification_rounds").unwrap_or(0);
        let seed = r.unsigned("seed").unwrap_or(0);
        let replications = r.unsigned("replications").unwrap_or(DEFAULT_REPLICATIONS as u64);
        let max_sim_time_ps = r.unsigned("max_sim_time_ps").unwrap_or(DEFAULT_HORIZON_PS);

        if !r.issues.is_empty() {
            return Err(ConfigError::Invalid(r.issues));
        }
        // Every required value is present past this point.
        let (
            Some(architecture),
            Some(attenuation),
            Some(node_separation_km),
            Some(epps_or_bsa_position),
            Some(f_epps_hz),
            Some(memories_per_node),
            Some(target_pairs),
            Some(mim_emission),
        ) = (
            architecture,
            attenuation,
            node_separation_km,
            epps_or_bsa_position,
            f_epps_hz,
            memories_per_node,
            target_pairs,
            mim_emission,
        )
        else {
            return Err(ConfigError::single(None, "incomplete configuration"));
        };

        let narrow = |key: &str, v: u64| -> Result<u32, ConfigIssue> {
            u32::try_from(v).map_err(|_| ConfigIssue {
                line: locate_key(text, None, key),
                message: format!("`{key}` = {v} is too large"),
            })
        };
        let mut issues = Vec::new();
        let memories_per_node = narrow("memories_per_node", memories_per_node)
            .map_err(|e| issues.push(e))
            .unwrap_or(0);
        let purification_rounds = narrow("purification_rounds", purification_rounds)
            .map_err(|e| issues.push(e))
            .unwrap_or(0);
        let replications = narrow("replications", replications)
            .map_err(|e| issues.push(e))
            .unwrap_or(0);
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }

        let cfg = LinkConfig {
            architecture,
            node_separation_km,
            epps_or_bsa_position,
            c_fiber_km_s,
            attenuation,
            f_epps_hz,
            memory_emission_hz: memory_emission_hz.unwrap_or(f_epps_hz),
            memories_per_node,
            p_bsa,
            epps_depolarizing_lambda: lambda,
            target_pairs,
            purification_rounds,
            seed,
            replications,
            max_sim_time_ps,
            mim_emission,
        };
        cfg.validate_anchored(Some(text))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_anchored(None)
    }

    fn validate_anchored(&self, text: Option<&str>) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut check = |ok: bool, table: Option<&str>, key: &str, message: String| {
            if !ok {
                issues.push(ConfigIssue {
                    line: text.and_then(|t| locate_key(t, table, key)),
                    message,
                });
            }
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let unit = |v: f64| (0.0..=1.0).contains(&v);

        for (key, v) in [
            ("node_separation_km", self.node_separation_km),
            ("c_fiber_km_s", self.c_fiber_km_s),
            ("f_epps_hz", self.f_epps_hz),
            ("memory_emission_hz", self.memory_emission_hz),
        ] {
            check(positive(v), None, key, format!("`{key}` must be strictly positive (got {v})"));
        }
        let (att_key, att_value) = match self.attenuation {
            Attenuation::DbPerKm(v) => ("db_per_km", v),
            Attenuation::AttenuationLengthKm(v) => ("attenuation_length_km", v),
        };
        check(
            positive(att_value),
            Some("attenuation"),
            att_key,
            format!("`attenuation.{att_key}` must be strictly positive (got {att_value})"),
        );
        check(
            self.p_bsa > 0.0 && self.p_bsa <= 1.0,
            None,
            "p_bsa",
            format!("`p_bsa` must lie in (0, 1] (got {})", self.p_bsa),
        );
        check(
            unit(self.epps_or_bsa_position),
            None,
            "epps_or_bsa_position",
            format!("`epps_or_bsa_position` must lie in [0, 1] (got {})", self.epps_or_bsa_position),
        );
        check(
            unit(self.epps_depolarizing_lambda),
            None,
            "epps_depolarizing_lambda",
            format!("`epps_depolarizing_lambda` must lie in [0, 1] (got {})", self.epps_depolarizing_lambda),
        );
        check(
            self.memories_per_node >= 1,
            None,
            "memories_per_node",
            "`memories_per_node` must be at least 1".to_string(),
        );
        check(
            self.replications >= 1,
            None,
            "replications",
            "`replications` must be at least 1".to_string(),
        );
        check(
            self.max_sim_time_ps > 0,
            None,
            "max_sim_time_ps",
            "`max_sim_time_ps` must be strictly positive".to_string(),
        );
        if self.architecture == Architecture::Mm {
            check(
                self.epps_or_bsa_position == 0.0 || self.epps_or_bsa_position == 1.0,
                None,
                "epps_or_bsa_position",
                format!(
                    "MM places the BSA inside a node: `epps_or_bsa_position` must be 0 or 1 (got {})",
                    self.epps_or_bsa_position
                ),
            );
        }
        if positive(self.f_epps_hz) {
            check(
                SimTime::period_of(self.f_epps_hz).as_ps() >= 1,
                None,
                "f_epps_hz",
                "`f_epps_hz` is above the 1 ps clock resolution".to_string(),
            );
        }
        if positive(self.memory_emission_hz) {
            check(
                SimTime::period_of(self.memory_emission_hz).as_ps() >= 1,
                None,
                "memory_emission_hz",
                "`memory_emission_hz` is above the 1 ps clock resolution".to_string(),
            );
        }
        if self.architecture == Architecture::Msm {
            check(
                self.memory_emission_hz == self.f_epps_hz,
                None,
                "memory_emission_hz",
                format!(
                    "MSM nodes emit at the source rate: `memory_emission_hz` ({}) must equal `f_epps_hz` ({})",
                    self.memory_emission_hz, self.f_epps_hz
                ),
            );
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    pub fn topology(&self) -> LinkTopology {
        LinkTopology {
            architecture: self.architecture,
            node_separation_km: self.node_separation_km,
            epps_or_bsa_position: self.epps_or_bsa_position,
        }
    }

    pub fn epps_interval(&self) -> SimTime {
        SimTime::period_of(self.f_epps_hz)
    }

    pub fn memory_interval(&self) -> SimTime {
        SimTime::period_of(self.memory_emission_hz)
    }

    pub fn horizon(&self) -> SimTime {
        SimTime::from_ps(self.max_sim_time_ps)
    }

    /// Analytic view of one side of the link.
    pub fn channel_params(&self, side: Side) -> ChannelParams {
        ChannelParams {
            per_side_distance_km: self.topology().side_distance_km(side),
            c_fiber_km_s: self.c_fiber_km_s,
            attenuation: self.attenuation,
            p_bsa: self.p_bsa,
            f_epps_hz: self.f_epps_hz,
        }
    }

    /// Render back to the file format.
    pub fn to_toml_string(&self) -> String {
        let (att_key, att_value) = match self.attenuation {
            Attenuation::DbPerKm(v) => ("db_per_km", v),
            Attenuation::AttenuationLengthKm(v) => ("attenuation_length_km", v),
        };
        let mim = match self.mim_emission {
            MimEmission::OnePerTick => "one_per_tick",
            MimEmission::AllFree => "all_free",
        };
        format!(
            "architecture = \"{}\"\n\
             node_separation_km = {:?}\n\
             epps_or_bsa_position = {:?}\n\
             c_fiber_km_s = {:?}\n\
             f_epps_hz = {:?}\n\
             memory_emission_hz = {:?}\n\
             memories_per_node = {}\n\
             p_bsa = {:?}\n\
             epps_depolarizing_lambda = {:?}\n\
             target_pairs = {}\n\
             purification_rounds = {}\n\
             seed = {}\n\
             replications = {}\n\
             max_sim_time_ps = {}\n\
             mim_emission = \"{}\"\n\
             \n[attenuation]\n{} = {:?}\n",
            self.architecture.as_str().to_ascii_lowercase(),
            self.node_separation_km,
            self.epps_or_bsa_position,
            self.c_fiber_km_s,
            self.f_epps_hz,
            self.memory_emission_hz,
            self.memories_per_node,
            self.p_bsa,
            self.epps_depolarizing_lambda,
            self.target_pairs,
            self.purification_rounds,
            self.seed,
            self.replications,
            self.max_sim_time_ps,
            mim,
            att_key,
            att_value,
        )
    }

    /// Fidelity and purification run: 20 km, source in the middle, 0.2 dB/km,
    /// eight memories, pairs depolarized to F = 0.7.
    pub fn fidelity_experiment() -> Self {
        LinkConfig {
            architecture: Architecture::Msm,
            node_separation_km: 20.0,
            epps_or_bsa_position: 0.5,
            c_fiber_km_s: DEFAULT_C_FIBER_KM_S,
            attenuation: Attenuation::DbPerKm(0.2),
            f_epps_hz: 1e6,
            memory_emission_hz: 1e6,
            memories_per_node: 8,
            p_bsa: DEFAULT_P_BSA,
            epps_depolarizing_lambda: 0.4,
            target_pairs: 100,
            purification_rounds: 1,
            seed: 1,
            replications: DEFAULT_REPLICATIONS,
            max_sim_time_ps: DEFAULT_HORIZON_PS,
            mim_emission: MimEmission::OnePerTick,
        }
    }

    /// Generation-time run over 1 km, attenuation length 21 km.
    pub fn generation_1km() -> Self {
        LinkConfig {
            node_separation_km: 1.0,
            attenuation: Attenuation::AttenuationLengthKm(21.0),
            epps_depolarizing_lambda: 0.0,
            purification_rounds: 0,
            ..Self::fidelity_experiment()
        }
    }

    /// Generation-time run over 20 km at 0.2 dB/km.
    pub fn generation_20km() -> Self {
        LinkConfig {
            node_separation_km: 20.0,
            attenuation: Attenuation::DbPerKm(0.2),
            ..Self::generation_1km()
        }
    }
}

fn read_attenuation(r: &mut Reader<'_>) -> Option<Attenuation> {
    let value = r.table.get("attenuation")?;
    let Value::Table(t) = value else {
        r.issue("attenuation", "`attenuation` must be a table with `db_per_km` or `attenuation_length_km`".into());
        return None;
    };
    let mut issues = Vec::new();
    for key in t.keys() {
        if !ATTENUATION_KEYS.contains(&key.as_str()) {
            issues.push(ConfigIssue {
                line: locate_key(r.text, Some("attenuation"), key),
                message: format!("unknown key `attenuation.{key}`"),
            });
        }
    }
    let num = |key: &str, issues: &mut Vec<ConfigIssue>| -> Option<f64> {
        match t.get(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                issues.push(ConfigIssue {
                    line: locate_key(r.text, Some("attenuation"), key),
                    message: format!("`attenuation.{key}` must be a number, found {}", other.type_str()),
                });
                None
            }
        }
    };
    let db = num("db_per_km", &mut issues);
    let l0 = num("attenuation_length_km", &mut issues);
    let out = match (t.contains_key("db_per_km"), t.contains_key("attenuation_length_km")) {
        (true, true) => {
            issues.push(ConfigIssue {
                line: locate_key(r.text, None, "attenuation"),
                message: "`attenuation` takes exactly one of `db_per_km` and `attenuation_length_km`".into(),
            });
            None
        }
        (false, false) => {
            issues.push(ConfigIssue {
                line: locate_key(r.text, None, "attenuation"),
                message: "`attenuation` needs `db_per_km` or `attenuation_length_km`".into(),
            });
            None
        }
        (true, false) => db.map(Attenuation::DbPerKm),
        (false, true) => l0.map(Attenuation::AttenuationLengthKm),
    };
    r.issues.extend(issues);
    out
}

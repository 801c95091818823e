//! Run configuration: cache geometry per level, defense flags, scheduling.
//!
//! Loaded from TOML. Every field has a default, so an empty file yields the
//! standard two-level setup (split 32 KiB L1 per core, shared 2 MiB LLC).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl ConfigError {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// A byte count that deserializes from either an integer or a string with a
/// `K`/`M`/`G` suffix (binary multiples), e.g. `"32K"` or `"2MB"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ByteSize(pub u64);

impl FromStr for ByteSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let upper = t.to_ascii_uppercase();
        let body = upper
            .strip_suffix("IB")
            .or_else(|| upper.strip_suffix('B'))
            .unwrap_or(&upper);
        let (digits, mult) = match body.chars().last() {
            Some('K') => (&body[..body.len() - 1], 1u64 << 10),
            Some('M') => (&body[..body.len() - 1], 1u64 << 20),
            Some('G') => (&body[..body.len() - 1], 1u64 << 30),
            _ => (body, 1),
        };
        let n: u64 = digits
            .trim()
            .parse()
            .map_err(|_| format!("not a size: {t:?}"))?;
        n.checked_mul(mult)
            .map(ByteSize)
            .ok_or_else(|| format!("size overflows: {t:?}"))
    }
}

impl fmt::Display for ByteSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0;
        if n >= 1 << 20 && n.is_multiple_of(1 << 20) {
            write!(f, "{}M", n >> 20)
        } else if n >= 1 << 10 && n.is_multiple_of(1 << 10) {
            write!(f, "{}K", n >> 10)
        } else {
            write!(f, "{n}")
        }
    }
}

impl Serialize for ByteSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for ByteSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(ByteSize(n)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One level of the hierarchy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub name: String,
    pub size: ByteSize,
    #[serde(default = "default_line_size")]
    pub line_size: u64,
    pub associativity: usize,
    pub hit_latency: u64,
    /// Separate instruction and data caches at this level.
    #[serde(default)]
    pub split: bool,
    /// One instance per core (shared by that core's hardware threads).
    #[serde(default)]
    pub private: bool,
}

fn default_line_size() -> u64 {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulePolicy {
    /// Context switches come from SCHED events in the trace.
    #[default]
    Explicit,
    /// Per-context round robin over the trace's processes.
    RoundRobin { slice_cycles: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub defense: bool,
    pub constant_time_flush: bool,
    pub timestamp_bits: u32,
    pub switch_cost_charged: bool,
    pub memory_latency: u64,
    pub cores: usize,
    pub threads_per_core: usize,
    /// Probe latency below this counts as a hit. Defaults to the midpoint of
    /// the top-level hit latency and memory latency.
    pub hit_threshold: Option<u64>,
    pub seed: u64,
    pub schedule: SchedulePolicy,
    pub levels: Vec<LevelSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            defense: true,
            constant_time_flush: false,
            timestamp_bits: 32,
            switch_cost_charged: true,
            memory_latency: 200,
            cores: 1,
            threads_per_core: 2,
            hit_threshold: None,
            seed: 1,
            schedule: SchedulePolicy::Explicit,
            levels: vec![
                LevelSpec {
                    name: "L1".into(),
                    size: ByteSize(32 << 10),
                    line_size: 64,
                    associativity: 8,
                    hit_latency: 2,
                    split: true,
                    private: true,
                },
                LevelSpec {
                    name: "LLC".into(),
                    size: ByteSize(2 << 20),
                    line_size: 64,
                    associativity: 16,
                    hit_latency: 20,
                    split: false,
                    private: false,
                },
            ],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn num_contexts(&self) -> usize {
        self.cores * self.threads_per_core
    }

    pub fn effective_hit_threshold(&self) -> u64 {
        self.hit_threshold.unwrap_or_else(|| {
            let top = self.levels.first().map_or(0, |l| l.hit_latency);
            (top + self.memory_latency) / 2
        })
    }

    pub fn with_defense(&self, defense: bool) -> Self {
        Self {
            defense,
            ..self.clone()
        }
    }

    /// Replaces the size of the last (outermost) level.
    pub fn with_llc_size(&self, size: u64) -> Self {
        let mut cfg = self.clone();
        if let Some(last) = cfg.levels.last_mut() {
            last.size = ByteSize(size);
        }
        cfg
    }

    /// True when the two configs describe the same caches and timing, so a
    /// paired run compares only the defense flag.
    pub fn same_geometry(&self, other: &Self) -> bool {
        self.levels == other.levels
            && self.memory_latency == other.memory_latency
            && self.cores == other.cores
            && self.threads_per_core == other.threads_per_core
            && self.timestamp_bits == other.timestamp_bits
            && self.constant_time_flush == other.constant_time_flush
            && self.switch_cost_charged == other.switch_cost_charged
            && self.schedule == other.schedule
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=32).contains(&self.timestamp_bits) {
            return Err(ConfigError::field("timestamp_bits", "must be between 1 and 32"));
        }
        if self.cores == 0 {
            return Err(ConfigError::field("cores", "must be positive"));
        }
        if self.threads_per_core == 0 {
            return Err(ConfigError::field("threads_per_core", "must be positive"));
        }
        if self.levels.is_empty() {
            return Err(ConfigError::field("levels", "at least one cache level is required"));
        }
        if let SchedulePolicy::RoundRobin { slice_cycles: 0 } = self.schedule {
            return Err(ConfigError::field("schedule.slice_cycles", "must be positive"));
        }
        let mut seen_shared = false;
        let mut prev_latency = 0;
        for (i, level) in self.levels.iter().enumerate() {
            let f = |name: &str| format!("levels[{i}].{name}");
            if level.name.trim().is_empty() {
                return Err(ConfigError::field(f("name"), "must not be empty"));
            }
            crate::cache::CacheGeometry::check(level.size.0, level.line_size, level.associativity)
                .map_err(|(field, reason)| ConfigError::field(f(field), reason))?;
            if level.hit_latency == 0 {
                return Err(ConfigError::field(f("hit_latency"), "must be positive"));
            }
            if level.hit_latency <= prev_latency {
                return Err(ConfigError::field(
                    f("hit_latency"),
                    "must be strictly greater than the level above",
                ));
            }
            prev_latency = level.hit_latency;
            if level.private && seen_shared {
                return Err(ConfigError::field(
                    f("private"),
                    "a private level cannot sit below a shared level",
                ));
            }
            seen_shared |= !level.private;
            if level.line_size != self.levels[0].line_size {
                return Err(ConfigError::field(f("line_size"), "all levels must share one line size"));
            }
        }
        if self.memory_latency <= prev_latency {
            return Err(ConfigError::field(
                "memory_latency",
                "must be strictly greater than every cache hit latency",
            ));
        }
        Ok(())
    }
}

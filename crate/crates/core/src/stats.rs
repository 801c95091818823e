//! Per-cache access counters and the aggregated per-level report.

use serde::{Deserialize, Serialize};

use crate::cache::{CacheId, Hierarchy, LevelClass};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub first_access_misses: u64,
    pub bypasses: u64,
}

impl LevelStats {
    fn add(&mut self, other: &LevelStats) {
        self.accesses += other.accesses;
        self.hits += other.hits;
        self.misses += other.misses;
        self.first_access_misses += other.first_access_misses;
        self.bypasses += other.bypasses;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub per_cache: Vec<LevelStats>,
    pub instructions: u64,
    pub context_switches: u64,
    pub switch_cycles: u64,
    pub flushes: u64,
    pub probes: u64,
}

impl Stats {
    pub fn new(num_caches: usize) -> Self {
        Self {
            per_cache: vec![LevelStats::default(); num_caches],
            ..Self::default()
        }
    }

    /// Adds one access's per-level classification to the counters.
    pub fn classify_and_count(&mut self, levels: &[(CacheId, LevelClass)]) {
        for &(id, class) in levels {
            let s = &mut self.per_cache[id.0];
            match class {
                LevelClass::NotAccessed => continue,
                LevelClass::Hit => s.hits += 1,
                LevelClass::Miss => s.misses += 1,
                LevelClass::FirstAccessMiss => s.first_access_misses += 1,
                LevelClass::Bypassed => s.bypasses += 1,
            }
            s.accesses += 1;
        }
    }
}

/// Counters for all cache instances sharing a label (e.g. every core's L1D).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub label: String,
    pub level: usize,
    #[serde(flatten)]
    pub counts: LevelStats,
    pub fills: u64,
    pub evictions: u64,
    pub invalidations: u64,
    pub dirty_evictions: u64,
    /// (ordinary + first-access misses) per thousand instructions.
    pub mpki: f64,
    pub first_access_mpki: f64,
}

impl LevelReport {
    pub fn total_misses(&self) -> u64 {
        self.counts.misses + self.counts.first_access_misses
    }
}

pub fn per_thousand(count: u64, instructions: u64) -> f64 {
    if instructions == 0 {
        0.0
    } else {
        count as f64 * 1000.0 / instructions as f64
    }
}

pub fn level_reports(hier: &Hierarchy, stats: &Stats) -> Vec<LevelReport> {
    let mut out: Vec<LevelReport> = Vec::new();
    for id in hier.cache_ids() {
        let info = hier.info(id);
        let k = hier.cache(id).counters();
        let idx = match out.iter().position(|r| r.label == info.label) {
            Some(i) => i,
            None => {
                out.push(LevelReport {
                    label: info.label.clone(),
                    level: info.level,
                    counts: LevelStats::default(),
                    fills: 0,
                    evictions: 0,
                    invalidations: 0,
                    dirty_evictions: 0,
                    mpki: 0.0,
                    first_access_mpki: 0.0,
                });
                out.len() - 1
            }
        };
        let r = &mut out[idx];
        r.counts.add(&stats.per_cache[id.0]);
        r.fills += k.fills;
        r.evictions += k.evictions;
        r.invalidations += k.invalidations;
        r.dirty_evictions += k.dirty_evictions;
    }
    for r in &mut out {
        r.mpki = per_thousand(r.total_misses(), stats.instructions);
        r.first_access_mpki = per_thousand(r.counts.first_access_misses, stats.instructions);
    }
    out
}

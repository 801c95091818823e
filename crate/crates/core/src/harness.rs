//! Paired baseline/defense experiments: leakage, overhead and LLC sweeps.

use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, SchedulePolicy};
use crate::stats::per_thousand;
use crate::timecache::{ProbeRecord, RunSummary, SimError, Simulator};
use crate::workload::{AccessEvent, AttackScenario, Op, Pid};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error("trace has no PROBE events")]
    NoProbes,
    #[error("baseline and defense configs differ in more than the defense flag")]
    GeometryMismatch,
    #[error("hit threshold {threshold} must lie in ({low}, {high}]")]
    ThresholdOutOfRange { threshold: u64, low: u64, high: u64 },
    #[error("decisive probe {seq} is not a PROBE event of the trace")]
    UnknownProbe { seq: u64 },
    #[error("secret has {secret} bits but {probes} decisive probes were given")]
    SecretLength { secret: usize, probes: usize },
    #[error("LLC sizes must be strictly increasing")]
    SizesNotIncreasing,
    #[error("LLC size {size}: {source}")]
    SweepConfig { size: u64, source: ConfigError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Two configs that differ only in the defense flag.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigPair {
    pub baseline: RunConfig,
    pub defense: RunConfig,
}

impl ConfigPair {
    pub fn from_base(cfg: &RunConfig) -> Self {
        Self {
            baseline: cfg.with_defense(false),
            defense: cfg.with_defense(true),
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        self.baseline.validate()?;
        self.defense.validate()?;
        if self.baseline.defense || !self.defense.defense || !self.baseline.same_geometry(&self.defense) {
            return Err(HarnessError::GeometryMismatch);
        }
        Ok(())
    }
}

pub struct RunOutput {
    pub summary: RunSummary,
    pub probes: Vec<ProbeRecord>,
}

fn simulate(cfg: &RunConfig, events: &[AccessEvent]) -> Result<RunOutput, SimError> {
    let mut sim = Simulator::new(cfg)?;
    sim.run(events)?;
    Ok(RunOutput {
        summary: sim.summary(),
        probes: sim.probes().to_vec(),
    })
}

/// Resolves the schedule once so both runs replay the same event order.
/// Round-robin slices are cycle based and the defense changes timing, so the
/// baseline's realized schedule is the one both sides execute.
pub fn materialize(cfg: &RunConfig, events: &[AccessEvent]) -> Result<Vec<AccessEvent>, SimError> {
    match cfg.schedule {
        SchedulePolicy::Explicit => Ok(events.to_vec()),
        SchedulePolicy::RoundRobin { .. } => Simulator::new(&cfg.with_defense(false))?.run(events),
    }
}

/// Runs both configs on one trace, each on its own thread.
pub fn run_pair(pair: &ConfigPair, events: &[AccessEvent]) -> Result<(RunOutput, RunOutput), HarnessError> {
    pair.check()?;
    let trace = materialize(&pair.baseline, events)?;
    let base_cfg = RunConfig {
        schedule: SchedulePolicy::Explicit,
        ..pair.baseline.clone()
    };
    let def_cfg = RunConfig {
        schedule: SchedulePolicy::Explicit,
        ..pair.defense.clone()
    };
    let (b, d) = thread::scope(|s| {
        let b = s.spawn(|| simulate(&base_cfg, &trace));
        let d = s.spawn(|| simulate(&def_cfg, &trace));
        (b.join().expect("baseline thread"), d.join().expect("defense thread"))
    });
    Ok((b?, d?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub seq: u64,
    pub addr: u64,
    pub latency: u64,
    pub hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub defense: bool,
    pub probes: Vec<ProbeSample>,
    pub hit_threshold_cycles: u64,
    pub inferred_bits: Vec<bool>,
    pub ground_truth_bits: Vec<bool>,
    pub accuracy: f64,
    pub hits_observed: u64,
}

/// (prober pid, ordinal among that pid's probes). Survives rescheduling,
/// which renumbers events but keeps each process's program order.
type ProbeKey = (Pid, usize);

fn probe_keys(trace: &[AccessEvent]) -> BTreeMap<u64, ProbeKey> {
    let mut counts: BTreeMap<Pid, usize> = BTreeMap::new();
    let mut keys = BTreeMap::new();
    for ev in trace.iter().filter(|e| e.op == Op::Probe) {
        let n = counts.entry(ev.pid).or_default();
        keys.insert(ev.seq, (ev.pid, *n));
        *n += 1;
    }
    keys
}

fn leakage(
    defense: bool,
    probes: &[ProbeRecord],
    monitored: &[ProbeKey],
    secret: &[bool],
    threshold: u64,
) -> LeakageReport {
    let mut counts: BTreeMap<Pid, usize> = BTreeMap::new();
    let mut by_key: BTreeMap<ProbeKey, bool> = BTreeMap::new();
    let samples: Vec<ProbeSample> = probes
        .iter()
        .map(|p| {
            let hit = p.latency < threshold;
            let n = counts.entry(p.pid).or_default();
            by_key.insert((p.pid, *n), hit);
            *n += 1;
            ProbeSample {
                seq: p.seq,
                addr: p.addr,
                latency: p.latency,
                hit,
            }
        })
        .collect();
    let inferred: Vec<bool> = monitored.iter().map(|k| by_key.get(k).copied().unwrap_or(false)).collect();
    let matching = inferred.iter().zip(secret).filter(|(a, b)| a == b).count();
    let accuracy = if secret.is_empty() {
        0.0
    } else {
        matching as f64 / secret.len() as f64
    };
    LeakageReport {
        defense,
        hits_observed: samples.iter().filter(|s| s.hit).count() as u64,
        probes: samples,
        hit_threshold_cycles: threshold,
        inferred_bits: inferred,
        ground_truth_bits: secret.to_vec(),
        accuracy,
    }
}

/// Checks `threshold` against the config's timing and fills in the default.
pub fn resolve_threshold(cfg: &RunConfig, threshold: Option<u64>) -> Result<u64, HarnessError> {
    let t = threshold.unwrap_or_else(|| cfg.effective_hit_threshold());
    let low = cfg.levels.first().map_or(0, |l| l.hit_latency);
    let high = cfg.memory_latency;
    if t <= low || t > high {
        return Err(HarnessError::ThresholdOutOfRange {
            threshold: t,
            low,
            high,
        });
    }
    Ok(t)
}

/// Runs an attack scenario under both configs. A probe is a hit iff its
/// latency is below the threshold; bit i is inferred as 1 iff the scenario's
/// i-th decisive probe hit. With no decisive probes every probe is a bit.
pub fn run_attack(
    scenario: &AttackScenario,
    pair: &ConfigPair,
    threshold: Option<u64>,
) -> Result<(LeakageReport, LeakageReport), HarnessError> {
    let keys = probe_keys(&scenario.trace);
    if keys.is_empty() {
        return Err(HarnessError::NoProbes);
    }
    let monitored: Vec<ProbeKey> = if scenario.decisive_probes.is_empty() {
        keys.values().copied().collect()
    } else {
        scenario
            .decisive_probes
            .iter()
            .map(|s| keys.get(s).copied().ok_or(HarnessError::UnknownProbe { seq: *s }))
            .collect::<Result<_, _>>()?
    };
    if monitored.len() != scenario.secret.len() {
        return Err(HarnessError::SecretLength {
            secret: scenario.secret.len(),
            probes: monitored.len(),
        });
    }
    let t = resolve_threshold(&pair.baseline, threshold)?;
    let (b, d) = run_pair(pair, &scenario.trace)?;
    Ok((
        leakage(false, &b.probes, &monitored, &scenario.secret, t),
        leakage(true, &d.probes, &monitored, &scenario.secret, t),
    ))
}

/// Self-check for attack runs: the defense must show no probe hit and,
/// unless only the defense is checked, the baseline attack must recover the
/// whole secret.
pub fn attack_verdict(baseline: &LeakageReport, defense: &LeakageReport, defense_only: bool) -> Result<(), String> {
    let mut failures = Vec::new();
    if defense.hits_observed != 0 {
        failures.push(format!("defense observed {} probe hits", defense.hits_observed));
    }
    if !defense_only && baseline.accuracy != 1.0 {
        failures.push(format!("baseline accuracy {} is below 1.0", baseline.accuracy));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join("; "))
    }
}

/// Probes that hit on a line the prober flushed and has not touched since.
/// Under the defense this list must be empty.
pub fn flushed_probe_hits(trace: &[AccessEvent], report: &LeakageReport, line_size: u64) -> Vec<u64> {
    let mut pending: BTreeMap<(Pid, u64), bool> = BTreeMap::new();
    let mut hit_at: BTreeMap<u64, bool> = report.probes.iter().map(|p| (p.seq, p.hit)).collect();
    let mut out = Vec::new();
    for ev in trace {
        let Some(addr) = ev.addr else { continue };
        let key = (ev.pid, addr / line_size);
        match ev.op {
            Op::Flush => {
                pending.insert(key, true);
            }
            Op::Probe => {
                if pending.get(&key) == Some(&true) && hit_at.remove(&ev.seq) == Some(true) {
                    out.push(ev.seq);
                }
                pending.remove(&key);
            }
            _ => {
                pending.remove(&key);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelOverhead {
    pub label: String,
    pub misses_baseline: u64,
    pub misses_defense: u64,
    pub first_access_misses: u64,
    pub accesses_defense: u64,
    pub mpki_baseline: f64,
    pub mpki_defense: f64,
    pub first_access_mpki: f64,
    /// First-access misses over all accesses reaching this level.
    pub first_access_fraction: f64,
    /// First-access misses over all misses at this level.
    pub first_access_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub instructions: u64,
    pub cycles_baseline: u64,
    pub cycles_defense: u64,
    pub overhead_ratio: f64,
    pub switch_cycles: u64,
    pub levels: Vec<LevelOverhead>,
    /// Ordinary misses agree and the defense adds exactly its first-access
    /// misses at every level.
    pub identity_holds: bool,
}

impl OverheadReport {
    pub fn level(&self, label: &str) -> Option<&LevelOverhead> {
        self.levels.iter().find(|l| l.label == label)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn overhead_from(base: &RunSummary, def: &RunSummary) -> OverheadReport {
    let mut identity = base.instructions == def.instructions && base.levels.len() == def.levels.len();
    let levels = base
        .levels
        .iter()
        .zip(&def.levels)
        .map(|(b, d)| {
            let fa = d.counts.first_access_misses;
            identity &= b.label == d.label
                && b.counts.first_access_misses == 0
                && b.counts.misses == d.counts.misses
                && d.total_misses() - b.total_misses() == fa
                && per_thousand(d.total_misses() - b.total_misses(), def.instructions) == d.first_access_mpki;
            LevelOverhead {
                label: d.label.clone(),
                misses_baseline: b.total_misses(),
                misses_defense: d.total_misses(),
                first_access_misses: fa,
                accesses_defense: d.counts.accesses,
                mpki_baseline: b.mpki,
                mpki_defense: d.mpki,
                first_access_mpki: d.first_access_mpki,
                first_access_fraction: ratio(fa, d.counts.accesses),
                first_access_share: ratio(fa, d.total_misses()),
            }
        })
        .collect();
    OverheadReport {
        instructions: def.instructions,
        cycles_baseline: base.cycles,
        cycles_defense: def.cycles,
        overhead_ratio: ratio(def.cycles, base.cycles),
        switch_cycles: def.switch_cycles,
        levels,
        identity_holds: identity,
    }
}

pub fn run_overhead(events: &[AccessEvent], pair: &ConfigPair) -> Result<OverheadReport, HarnessError> {
    let (b, d) = run_pair(pair, events)?;
    Ok(overhead_from(&b.summary, &d.summary))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub llc_size: u64,
    pub overhead_ratio: f64,
    pub first_access_misses: u64,
    pub total_misses: u64,
    /// First-access misses over all misses at the outermost level.
    pub first_access_to_total_miss: f64,
    pub evictions: u64,
    pub identity_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub llc_label: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn llc_sizes(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.llc_size).collect()
    }

    pub fn share_non_increasing(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].first_access_to_total_miss <= w[0].first_access_to_total_miss)
    }
}

/// Paired runs of one trace with the outermost level resized to each size.
/// Sizes run on separate threads.
pub fn run_sensitivity(events: &[AccessEvent], base: &RunConfig, llc_sizes: &[u64]) -> Result<SweepResult, HarnessError> {
    if llc_sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::SizesNotIncreasing);
    }
    let pairs = llc_sizes
        .iter()
        .map(|&size| {
            let cfg = base.with_llc_size(size);
            cfg.validate().map_err(|source| HarnessError::SweepConfig { size, source })?;
            Ok(ConfigPair::from_base(&cfg))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let label = base.levels.last().map(|l| l.name.clone()).unwrap_or_default();
    let results: Vec<Result<(OverheadReport, u64), HarnessError>> = thread::scope(|s| {
        let handles: Vec<_> = pairs
            .iter()
            .map(|p| {
                s.spawn(move || {
                    let (b, d) = run_pair(p, events)?;
                    let evictions = b.summary.levels.last().map_or(0, |l| l.evictions);
                    Ok((overhead_from(&b.summary, &d.summary), evictions))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep thread")).collect()
    });
    let mut points = Vec::with_capacity(llc_sizes.len());
    for (&size, r) in llc_sizes.iter().zip(results) {
        let (r, evictions) = r?;
        let llc = r.levels.last().expect("at least one level");
        points.push(SweepPoint {
            llc_size: size,
            overhead_ratio: r.overhead_ratio,
            first_access_misses: llc.first_access_misses,
            total_misses: llc.misses_defense,
            first_access_to_total_miss: llc.first_access_share,
            evictions,
            identity_holds: r.identity_holds,
        });
    }
    Ok(SweepResult {
        llc_label: label,
        points,
    })
}

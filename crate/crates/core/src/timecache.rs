//! TimeCache on top of the baseline hierarchy.
//!
//! A line counts as a hit for a context only if that context's s-bit is set.
//! A resident line with a clear s-bit is a *first access*: the request is
//! sent further down and its latency is what the requester observes, but the
//! resident copy is not refilled. On a context switch the outgoing process's
//! s-bit columns are saved with the current time (`Ts`), the incoming
//! process's columns are restored, and every line loaded after its `Ts`
//! (`Tc > Ts`) has the restored s-bit cleared by the bit-serial comparator.
//!
//! Tag, LRU and dirty state evolve exactly as in the baseline hierarchy for
//! every trace; the defense only changes s-bits, latencies and the clock.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitserial::BitRow;
use crate::cache::{
    AccessKind, Addr, CacheId, GeometryError, Hierarchy, LevelClass, ServedBy,
};
use crate::config::{ConfigError, RunConfig, SchedulePolicy};
use crate::stats::{level_reports, LevelReport, Stats};
use crate::workload::{AccessEvent, Op, Pid};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("event {seq}: unknown hardware context {ctx}")]
    UnknownContext { seq: u64, ctx: usize },
    #[error("event {seq}: pid {pid} is not scheduled on ctx {ctx}")]
    NotScheduled { seq: u64, pid: Pid, ctx: usize },
    #[error("event {seq}: {op} requires an address")]
    MissingAddress { seq: u64, op: &'static str },
}

/// Unbounded cycle counter; timestamps see its low `bits` bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlobalClock {
    now: u64,
    bits: u32,
}

impl GlobalClock {
    pub fn new(bits: u32) -> Self {
        Self { now: 0, bits }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn period(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn wrap(&self, cycle: u64) -> u32 {
        (cycle & (self.period() - 1)) as u32
    }

    pub fn wrapped(&self) -> u32 {
        self.wrap(self.now)
    }

    pub fn advance(&mut self, cycles: u64) {
        self.now += cycles;
    }
}

/// Whether the timestamp counter wrapped between a save at `saved_at` and
/// `now`. The hardware-visible test is `wrapped(now) < Ts`; it only sees a
/// single wrap, so software also treats a full elapsed period as a rollover.
pub fn rollover_detected(saved_at: u64, now: u64, modulus: u64) -> bool {
    now % modulus < saved_at % modulus || now - saved_at >= modulus
}

/// Saved s-bit column for one cache, with the time it was captured.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SavedSbits {
    pub bits: BitRow,
    pub saved_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessRecord {
    pub pid: Pid,
    /// Wrapped preemption timestamp of the latest save.
    pub ts: u32,
    pub saved_sbits: BTreeMap<CacheId, SavedSbits>,
    pub ever_scheduled: bool,
}

impl ProcessRecord {
    pub fn new(pid: Pid) -> Self {
        Self {
            pid,
            ts: 0,
            saved_sbits: BTreeMap::new(),
            ever_scheduled: false,
        }
    }
}

/// Cost of one context switch under the defense.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwitchCostModel {
    pub memory_latency: u64,
    pub compare_cycles: u64,
}

impl SwitchCostModel {
    /// 64-byte transfers needed to move one s-bit per line: 512 bits each.
    pub fn sbit_copy_accesses(num_lines: usize) -> u64 {
        (num_lines as u64).div_ceil(512)
    }

    /// Save plus restore over every cache, then one bit-serial compare.
    pub fn switch_cycles(&self, lines_per_cache: impl IntoIterator<Item = usize>) -> u64 {
        let copies: u64 = lines_per_cache
            .into_iter()
            .map(|n| 2 * Self::sbit_copy_accesses(n) * self.memory_latency)
            .sum();
        copies + self.compare_cycles
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessOutcome {
    pub levels: Vec<(CacheId, LevelClass)>,
    pub latency: u64,
    pub writeback_cycles: u64,
    pub served_by: ServedBy,
}

impl AccessOutcome {
    pub fn class_at(&self, id: CacheId) -> LevelClass {
        self.levels
            .iter()
            .find(|(c, _)| *c == id)
            .map_or(LevelClass::NotAccessed, |(_, k)| *k)
    }

    pub fn classes(&self) -> Vec<LevelClass> {
        self.levels.iter().map(|(_, k)| *k).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub seq: u64,
    pub pid: Pid,
    pub addr: Addr,
    pub latency: u64,
}

/// What one trace event did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepResult {
    Access(AccessOutcome),
    Flush { latency: u64 },
    Switch { cycles: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub defense: bool,
    pub events: u64,
    pub instructions: u64,
    pub cycles: u64,
    pub context_switches: u64,
    pub switch_cycles: u64,
    pub flushes: u64,
    pub probes: u64,
    pub memory_writebacks: u64,
    pub levels: Vec<LevelReport>,
}

impl RunSummary {
    pub fn level(&self, label: &str) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.label == label)
    }
}

pub struct Simulator {
    cfg: RunConfig,
    hier: Hierarchy,
    clock: GlobalClock,
    running: Vec<Option<Pid>>,
    processes: BTreeMap<Pid, ProcessRecord>,
    costs: SwitchCostModel,
    stats: Stats,
    probes: Vec<ProbeRecord>,
    events: u64,
}

impl Simulator {
    pub fn new(cfg: &RunConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let hier = Hierarchy::new(cfg)?;
        let n = hier.caches().len();
        Ok(Self {
            clock: GlobalClock::new(cfg.timestamp_bits),
            running: vec![None; cfg.num_contexts()],
            processes: BTreeMap::new(),
            costs: SwitchCostModel {
                memory_latency: cfg.memory_latency,
                compare_cycles: u64::from(cfg.timestamp_bits),
            },
            stats: Stats::new(n),
            probes: Vec::new(),
            events: 0,
            hier,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hier
    }

    pub fn clock(&self) -> &GlobalClock {
        &self.clock
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    pub fn probes(&self) -> &[ProbeRecord] {
        &self.probes
    }

    pub fn process(&self, pid: Pid) -> Option<&ProcessRecord> {
        self.processes.get(&pid)
    }

    pub fn running(&self, ctx: usize) -> Option<Pid> {
        self.running.get(ctx).copied().flatten()
    }

    /// Test hook: moves the clock forward without any event.
    pub fn idle(&mut self, cycles: u64) {
        self.clock.advance(cycles);
    }

    fn check_running(&self, seq: u64, pid: Pid, ctx: usize) -> Result<(), SimError> {
        if ctx >= self.running.len() {
            return Err(SimError::UnknownContext { seq, ctx });
        }
        if self.running[ctx] != Some(pid) {
            return Err(SimError::NotScheduled { seq, pid, ctx });
        }
        Ok(())
    }

    /// One memory access by `pid` on `ctx`.
    pub fn access(&mut self, pid: Pid, ctx: usize, addr: Addr, kind: AccessKind, write: bool) -> Result<AccessOutcome, SimError> {
        self.check_running(self.events, pid, ctx)?;
        let outcome = self.access_unchecked(ctx, addr, kind, write);
        self.stats.classify_and_count(&outcome.levels);
        self.clock.advance(outcome.latency + outcome.writeback_cycles);
        Ok(outcome)
    }

    fn access_unchecked(&mut self, ctx: usize, addr: Addr, kind: AccessKind, write: bool) -> AccessOutcome {
        let path = self.hier.path(ctx, kind).to_vec();
        let mut classes = vec![LevelClass::NotAccessed; path.len()];
        // First level holding the line: where the baseline would be served.
        let resident = path.iter().position(|&id| self.hier.cache(id).contains(addr));
        let upto = resident.unwrap_or(path.len());
        classes[..upto].fill(LevelClass::Miss);

        let served = match resident {
            None => ServedBy::Memory,
            Some(first) if !self.cfg.defense => {
                classes[first] = LevelClass::Hit;
                ServedBy::Level(first)
            }
            Some(first) => {
                let mut served = ServedBy::Memory;
                for (i, &id) in path.iter().enumerate().skip(first) {
                    let col = self.hier.sbit_column(id, ctx);
                    let cache = self.hier.cache_mut(id);
                    match cache.lookup(addr) {
                        Some((set, way)) if cache.sbit(set, way, col) => {
                            classes[i] = LevelClass::Hit;
                            served = ServedBy::Level(i);
                            break;
                        }
                        Some((set, way)) => {
                            classes[i] = LevelClass::FirstAccessMiss;
                            cache.set_sbit(set, way, col);
                        }
                        None => classes[i] = LevelClass::Bypassed,
                    }
                }
                served
            }
        };
        if let Some(first) = resident {
            let cache = self.hier.cache_mut(path[first]);
            let (set, way) = cache.lookup(addr).expect("resident");
            cache.touch_lru(set, way);
        }
        let latency = self.hier.service_latency(&path, served);
        // Tc is the fill completion time.
        let tc = self.clock.wrap(self.clock.now() + latency);
        let writeback_cycles = self.hier.fill_absent_above(&path, upto, addr, ctx, tc);
        if write {
            self.hier.mark_top_dirty(&path, addr);
        }
        AccessOutcome {
            levels: path.into_iter().zip(classes).collect(),
            latency,
            writeback_cycles,
            served_by: served,
        }
    }

    /// Invalidates the line at every level. Returns the flush latency.
    pub fn flush(&mut self, ctx: usize, addr: Addr) -> Result<u64, SimError> {
        if ctx >= self.running.len() {
            return Err(SimError::UnknownContext { seq: self.events, ctx });
        }
        let path = self.hier.path(ctx, AccessKind::Data).to_vec();
        let out = self.hier.flush(&path, addr, self.cfg.constant_time_flush);
        self.stats.flushes += 1;
        self.clock.advance(out.latency);
        Ok(out.latency)
    }

    fn save_sbits(&mut self, pid: Pid, ctx: usize) {
        let now = self.clock.now();
        let ts = self.clock.wrapped();
        let record = self.processes.entry(pid).or_insert_with(|| ProcessRecord::new(pid));
        for id in self.hier.reachable(ctx) {
            let col = self.hier.sbit_column(id, ctx);
            let bits = self.hier.cache(id).array().save_sbits(col).expect("column in range");
            record.saved_sbits.insert(id, SavedSbits { bits, saved_at: now });
        }
        record.ts = ts;
    }

    fn restore_sbits(&mut self, pid: Pid, ctx: usize) {
        let now = self.clock.now();
        let period = self.clock.period();
        let record = self.processes.entry(pid).or_insert_with(|| ProcessRecord::new(pid));
        record.ever_scheduled = true;
        for id in self.hier.reachable(ctx) {
            let col = self.hier.sbit_column(id, ctx);
            let cache = self.hier.cache_mut(id);
            match record.saved_sbits.get(&id) {
                Some(saved) if !rollover_detected(saved.saved_at, now, period) => {
                    cache.restore_sbits(col, &saved.bits);
                    let ts = (saved.saved_at & (period - 1)) as u32;
                    cache
                        .array_mut()
                        .compare_and_reset(ts, col)
                        .expect("context in range");
                }
                _ => cache.array_mut().clear_sbit_row(col).expect("context in range"),
            }
        }
    }

    /// Schedules `in_pid` on `ctx`, preempting whatever ran there. Returns
    /// the cycles charged for the switch.
    pub fn context_switch(&mut self, ctx: usize, in_pid: Pid) -> Result<u64, SimError> {
        if ctx >= self.running.len() {
            return Err(SimError::UnknownContext { seq: self.events, ctx });
        }
        let out = self.running[ctx];
        if out == Some(in_pid) {
            return Ok(0);
        }
        let elsewhere = self.running.iter().position(|&p| p == Some(in_pid));
        if self.cfg.defense {
            if let Some(other) = elsewhere {
                self.save_sbits(in_pid, other);
            }
            if let Some(out_pid) = out {
                self.save_sbits(out_pid, ctx);
            }
            self.restore_sbits(in_pid, ctx);
        }
        if let Some(other) = elsewhere {
            self.running[other] = None;
        }
        self.running[ctx] = Some(in_pid);
        let cycles = if self.cfg.defense && self.cfg.switch_cost_charged {
            let lines = self
                .hier
                .reachable(ctx)
                .into_iter()
                .map(|id| self.hier.cache(id).geometry().num_lines());
            self.costs.switch_cycles(lines)
        } else {
            0
        };
        self.stats.context_switches += 1;
        self.stats.switch_cycles += cycles;
        self.clock.advance(cycles);
        Ok(cycles)
    }

    pub fn step(&mut self, ev: &AccessEvent) -> Result<StepResult, SimError> {
        self.events = ev.seq;
        let need_addr = || {
            ev.addr.ok_or(SimError::MissingAddress {
                seq: ev.seq,
                op: ev.op.mnemonic(),
            })
        };
        let result = match ev.op {
            Op::Sched => StepResult::Switch {
                cycles: self.context_switch(ev.ctx, ev.pid)?,
            },
            Op::Flush => {
                let addr = need_addr()?;
                self.check_running(ev.seq, ev.pid, ev.ctx)?;
                self.stats.instructions += 1;
                StepResult::Flush {
                    latency: self.flush(ev.ctx, addr)?,
                }
            }
            op => {
                let addr = need_addr()?;
                let (kind, write) = op.access_kind().expect("memory op");
                let outcome = self.access(ev.pid, ev.ctx, addr, kind, write)?;
                self.stats.instructions += 1;
                if op == Op::Probe {
                    self.stats.probes += 1;
                    self.probes.push(ProbeRecord {
                        seq: ev.seq,
                        pid: ev.pid,
                        addr,
                        latency: outcome.latency,
                    });
                }
                StepResult::Access(outcome)
            }
        };
        Ok(result)
    }

    /// Runs a trace under the configured schedule policy. Returns the event
    /// sequence actually executed (the input itself for explicit schedules).
    pub fn run(&mut self, events: &[AccessEvent]) -> Result<Vec<AccessEvent>, SimError> {
        match self.cfg.schedule {
            SchedulePolicy::Explicit => {
                for ev in events {
                    self.step(ev)?;
                }
                Ok(events.to_vec())
            }
            SchedulePolicy::RoundRobin { slice_cycles } => self.run_round_robin(events, slice_cycles),
        }
    }

    /// Ignores the trace's SCHED events. Each process runs on the context of
    /// its first event; contexts take turns one event at a time, and a
    /// context switches to its next process once its slice has expired.
    fn run_round_robin(&mut self, events: &[AccessEvent], slice: u64) -> Result<Vec<AccessEvent>, SimError> {
        let mut home: BTreeMap<Pid, usize> = BTreeMap::new();
        let mut queues: BTreeMap<usize, Vec<(Pid, VecDeque<AccessEvent>)>> = BTreeMap::new();
        for ev in events.iter().filter(|e| e.op != Op::Sched) {
            let ctx = *home.entry(ev.pid).or_insert(ev.ctx);
            let procs = queues.entry(ctx).or_default();
            match procs.iter_mut().find(|(p, _)| *p == ev.pid) {
                Some((_, q)) => q.push_back(*ev),
                None => procs.push((ev.pid, VecDeque::from([*ev]))),
            }
        }
        let mut current: BTreeMap<usize, (usize, u64)> = BTreeMap::new();
        let mut realized = Vec::with_capacity(events.len());
        let mut seq = 0u64;
        loop {
            let mut progressed = false;
            for (&ctx, procs) in queues.iter_mut() {
                if procs.iter().all(|(_, q)| q.is_empty()) {
                    continue;
                }
                let now = self.clock.now();
                let pick = match current.get(&ctx) {
                    Some(&(idx, started)) if !procs[idx].1.is_empty() && now - started < slice => None,
                    Some(&(idx, _)) => Some((1..=procs.len()).map(|k| (idx + k) % procs.len()).find(|&i| !procs[i].1.is_empty())),
                    None => Some(procs.iter().position(|(_, q)| !q.is_empty())),
                };
                if let Some(Some(next)) = pick {
                    let pid = procs[next].0;
                    seq += 1;
                    let sched = AccessEvent::sched(seq, pid, ctx);
                    self.step(&sched)?;
                    realized.push(sched);
                    current.insert(ctx, (next, self.clock.now()));
                }
                let idx = current[&ctx].0;
                let mut ev = procs[idx].1.pop_front().expect("non-empty queue");
                seq += 1;
                ev.seq = seq;
                ev.ctx = ctx;
                self.step(&ev)?;
                realized.push(ev);
                progressed = true;
            }
            if !progressed {
                break;
            }
        }
        Ok(realized)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            defense: self.cfg.defense,
            events: self.stats.instructions + self.stats.context_switches,
            instructions: self.stats.instructions,
            cycles: self.clock.now(),
            context_switches: self.stats.context_switches,
            switch_cycles: self.stats.switch_cycles,
            flushes: self.stats.flushes,
            probes: self.stats.probes,
            memory_writebacks: self.hier.memory_writebacks(),
            levels: level_reports(&self.hier, &self.stats),
        }
    }
}

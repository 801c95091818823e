//! Set-associative, write-back, write-allocate caches with strict LRU, and the
//! non-inclusive hierarchy that connects them to a flat memory.
//!
//! Per-line `tc` timestamps and s-bits live in each cache's
//! [`TransposeArray`]; the TimeCache layer reads and updates them through
//! the hooks exposed here.

use std::fmt;

use thiserror::Error;

use crate::bitserial::{BitRow, TransposeArray};
use crate::config::RunConfig;

pub type Addr = u64;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid cache geometry ({field}): {reason}")]
pub struct GeometryError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessKind {
    Data,
    Instruction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheGeometry {
    pub total_size_bytes: u64,
    pub line_size_bytes: u64,
    pub associativity: usize,
    pub hit_latency_cycles: u64,
    /// Position in the hierarchy, 0 = closest to the core.
    pub level_id: usize,
    /// Width of each line's s-bit vector.
    pub num_hw_contexts: usize,
    set_bits: u32,
    offset_bits: u32,
}

impl CacheGeometry {
    pub fn new(
        total_size_bytes: u64,
        line_size_bytes: u64,
        associativity: usize,
        hit_latency_cycles: u64,
        level_id: usize,
        num_hw_contexts: usize,
    ) -> Result<Self, GeometryError> {
        Self::check(total_size_bytes, line_size_bytes, associativity)
            .map_err(|(field, reason)| GeometryError { field, reason })?;
        if hit_latency_cycles == 0 {
            return Err(GeometryError {
                field: "hit_latency",
                reason: "must be positive".into(),
            });
        }
        if num_hw_contexts == 0 {
            return Err(GeometryError {
                field: "num_hw_contexts",
                reason: "must be positive".into(),
            });
        }
        let sets = total_size_bytes / (line_size_bytes * associativity as u64);
        Ok(Self {
            total_size_bytes,
            line_size_bytes,
            associativity,
            hit_latency_cycles,
            level_id,
            num_hw_contexts,
            set_bits: sets.trailing_zeros(),
            offset_bits: line_size_bytes.trailing_zeros(),
        })
    }

    pub(crate) fn check(size: u64, line: u64, assoc: usize) -> Result<(), (&'static str, String)> {
        if line == 0 || !line.is_power_of_two() {
            return Err(("line_size", format!("{line} is not a positive power of two")));
        }
        if assoc == 0 {
            return Err(("associativity", "must be positive".into()));
        }
        if size == 0 {
            return Err(("size", "must be positive".into()));
        }
        let way_bytes = line * assoc as u64;
        if !size.is_multiple_of(way_bytes) {
            return Err(("size", format!("{size} is not divisible by line_size x associativity ({way_bytes})")));
        }
        let sets = size / way_bytes;
        if !sets.is_power_of_two() {
            return Err(("size", format!("set count {sets} is not a power of two")));
        }
        Ok(())
    }

    pub fn num_sets(&self) -> usize {
        1 << self.set_bits
    }

    pub fn num_lines(&self) -> usize {
        self.num_sets() * self.associativity
    }

    pub fn line_number(&self, addr: Addr) -> u64 {
        addr >> self.offset_bits
    }

    pub fn set_index(&self, addr: Addr) -> usize {
        (self.line_number(addr) & ((1u64 << self.set_bits) - 1)) as usize
    }

    pub fn tag(&self, addr: Addr) -> u64 {
        self.line_number(addr) >> self.set_bits
    }

    pub fn line_addr(&self, tag: u64, set: usize) -> Addr {
        ((tag << self.set_bits) | set as u64) << self.offset_bits
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryModel {
    pub access_latency_cycles: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheLine {
    pub tag: u64,
    pub valid: bool,
    pub dirty: bool,
    /// Larger is more recently used; only the order within a set matters.
    pub lru_stamp: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvictedLine {
    pub addr: Addr,
    pub dirty: bool,
}

/// Structural counters; `fills == evictions + invalidations + resident`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheCounters {
    pub fills: u64,
    pub evictions: u64,
    pub invalidations: u64,
    pub dirty_evictions: u64,
}

#[derive(Clone, Debug)]
pub struct Cache {
    geometry: CacheGeometry,
    lines: Vec<CacheLine>,
    array: TransposeArray,
    use_clock: u64,
    counters: CacheCounters,
}

impl Cache {
    pub fn new(geometry: CacheGeometry, timestamp_bits: u32) -> Self {
        let n = geometry.num_lines();
        let array = TransposeArray::new(n, timestamp_bits, geometry.num_hw_contexts);
        Self {
            geometry,
            lines: vec![CacheLine::default(); n],
            array,
            use_clock: 0,
            counters: CacheCounters::default(),
        }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn counters(&self) -> CacheCounters {
        self.counters
    }

    pub fn array(&self) -> &TransposeArray {
        &self.array
    }

    pub fn array_mut(&mut self) -> &mut TransposeArray {
        &mut self.array
    }

    #[inline]
    pub fn column(&self, set: usize, way: usize) -> usize {
        set * self.geometry.associativity + way
    }

    pub fn line(&self, set: usize, way: usize) -> &CacheLine {
        &self.lines[self.column(set, way)]
    }

    pub fn lookup(&self, addr: Addr) -> Option<(usize, usize)> {
        let set = self.geometry.set_index(addr);
        let tag = self.geometry.tag(addr);
        let base = set * self.geometry.associativity;
        self.lines[base..base + self.geometry.associativity]
            .iter()
            .position(|l| l.valid && l.tag == tag)
            .map(|way| (set, way))
    }

    pub fn contains(&self, addr: Addr) -> bool {
        self.lookup(addr).is_some()
    }

    pub fn touch_lru(&mut self, set: usize, way: usize) {
        self.use_clock += 1;
        let col = self.column(set, way);
        debug_assert!(self.lines[col].valid);
        self.lines[col].lru_stamp = self.use_clock;
    }

    pub fn mark_dirty(&mut self, set: usize, way: usize) {
        let col = self.column(set, way);
        self.lines[col].dirty = true;
    }

    /// Way to replace in `set`: the first invalid way, else the LRU way.
    pub fn victim_way(&self, set: usize) -> usize {
        let base = set * self.geometry.associativity;
        let ways = &self.lines[base..base + self.geometry.associativity];
        ways.iter().position(|l| !l.valid).unwrap_or_else(|| {
            ways.iter()
                .enumerate()
                .min_by_key(|(_, l)| l.lru_stamp)
                .map(|(w, _)| w)
                .expect("associativity is positive")
        })
    }

    /// Brings `addr` in. `ctx` is the s-bit column of the filling context and
    /// `tc` the (already wrapped) load time.
    pub fn fill(&mut self, addr: Addr, ctx: usize, tc: u32) -> Option<EvictedLine> {
        debug_assert!(self.lookup(addr).is_none(), "fill of a resident line");
        let set = self.geometry.set_index(addr);
        let way = self.victim_way(set);
        let evicted = if self.line(set, way).valid {
            let ev = self.remove(set, way);
            self.counters.evictions += 1;
            if ev.dirty {
                self.counters.dirty_evictions += 1;
            }
            Some(ev)
        } else {
            None
        };
        let col = self.column(set, way);
        self.lines[col] = CacheLine {
            tag: self.geometry.tag(addr),
            valid: true,
            dirty: false,
            lru_stamp: 0,
        };
        self.touch_lru(set, way);
        self.array
            .fill_column(col, tc, ctx)
            .expect("column and context in range");
        self.counters.fills += 1;
        evicted
    }

    /// Invalidates a valid line and clears all its s-bits.
    pub fn evict_or_invalidate(&mut self, set: usize, way: usize) -> EvictedLine {
        let ev = self.remove(set, way);
        self.counters.invalidations += 1;
        ev
    }

    fn remove(&mut self, set: usize, way: usize) -> EvictedLine {
        let col = self.column(set, way);
        let line = self.lines[col];
        debug_assert!(line.valid);
        self.lines[col].valid = false;
        self.lines[col].dirty = false;
        self.array.clear_sbits(col).expect("column in range");
        EvictedLine {
            addr: self.geometry.line_addr(line.tag, set),
            dirty: line.dirty,
        }
    }

    pub fn tc(&self, set: usize, way: usize) -> u32 {
        self.array.read_tc(self.column(set, way)).expect("column in range")
    }

    pub fn sbit(&self, set: usize, way: usize, ctx: usize) -> bool {
        self.array
            .read_sbit(self.column(set, way), ctx)
            .expect("column and context in range")
    }

    pub fn set_sbit(&mut self, set: usize, way: usize, ctx: usize) {
        let col = self.column(set, way);
        self.array.write_sbit(col, ctx, true).expect("column and context in range");
    }

    /// Loads a saved s-bit column; invalid lines keep all s-bits clear.
    pub fn restore_sbits(&mut self, ctx: usize, saved: &BitRow) {
        let mut row = saved.clone();
        for (col, line) in self.lines.iter().enumerate() {
            if !line.valid {
                row.set(col, false);
            }
        }
        self.array.restore_sbits(ctx, &row).expect("row matches array");
    }

    pub fn resident_count(&self) -> usize {
        self.lines.iter().filter(|l| l.valid).count()
    }

    pub fn resident_lines(&self) -> Vec<Addr> {
        let mut out: Vec<Addr> = self
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.valid)
            .map(|(col, l)| self.geometry.line_addr(l.tag, col / self.geometry.associativity))
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheInfo {
    /// Level label, e.g. `L1D` or `LLC`; instances on different cores share it.
    pub label: String,
    pub level: usize,
    pub core: Option<usize>,
    pub kind: Option<AccessKind>,
}

/// Per-level classification of one access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LevelClass {
    /// The request never reached this level.
    NotAccessed,
    Hit,
    /// Line absent: ordinary miss, the level is filled on the way back.
    Miss,
    /// Line resident but the requester's s-bit was clear.
    FirstAccessMiss,
    /// Line absent below the resident level during a first-access descent;
    /// the request passes through without allocating.
    Bypassed,
}

impl fmt::Display for LevelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LevelClass::NotAccessed => "-",
            LevelClass::Hit => "hit",
            LevelClass::Miss => "miss",
            LevelClass::FirstAccessMiss => "first_access_miss",
            LevelClass::Bypassed => "bypass",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ServedBy {
    /// Index into the access path.
    Level(usize),
    Memory,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineOutcome {
    pub levels: Vec<LevelClass>,
    pub latency: u64,
    pub writeback_cycles: u64,
    pub served_by: ServedBy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlushOutcome {
    pub latency: u64,
    pub levels_found: usize,
    pub wrote_back: bool,
}

/// The cache hierarchy: private levels per core (optionally split I/D),
/// shared levels below, then memory. Non-inclusive, no back-invalidation.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    caches: Vec<Cache>,
    info: Vec<CacheInfo>,
    /// `paths[core][kind]` lists cache ids from the core outward.
    paths: Vec<[Vec<CacheId>; 2]>,
    private: Vec<bool>,
    threads_per_core: usize,
    memory: MemoryModel,
    ts_mask: u64,
    level_latency: Vec<u64>,
    memory_writebacks: u64,
}

fn kind_slot(kind: AccessKind) -> usize {
    match kind {
        AccessKind::Data => 0,
        AccessKind::Instruction => 1,
    }
}

impl Hierarchy {
    pub fn new(cfg: &RunConfig) -> Result<Self, GeometryError> {
        let mut caches = Vec::new();
        let mut info = Vec::new();
        let mut private = Vec::new();
        let mut paths: Vec<[Vec<CacheId>; 2]> = vec![[Vec::new(), Vec::new()]; cfg.cores];
        let contexts = cfg.num_contexts();
        for (level, spec) in cfg.levels.iter().enumerate() {
            let width = if spec.private { cfg.threads_per_core } else { contexts };
            let instances: Vec<Option<usize>> = if spec.private {
                (0..cfg.cores).map(Some).collect()
            } else {
                vec![None]
            };
            let kinds: Vec<Option<AccessKind>> = if spec.split {
                vec![Some(AccessKind::Data), Some(AccessKind::Instruction)]
            } else {
                vec![None]
            };
            for core in &instances {
                for kind in &kinds {
                    let geometry = CacheGeometry::new(
                        spec.size.0,
                        spec.line_size,
                        spec.associativity,
                        spec.hit_latency,
                        level,
                        width,
                    )?;
                    let id = CacheId(caches.len());
                    caches.push(Cache::new(geometry, cfg.timestamp_bits));
                    let label = match kind {
                        Some(AccessKind::Data) => format!("{}D", spec.name),
                        Some(AccessKind::Instruction) => format!("{}I", spec.name),
                        None => spec.name.clone(),
                    };
                    info.push(CacheInfo {
                        label,
                        level,
                        core: *core,
                        kind: *kind,
                    });
                    private.push(spec.private);
                    for (c, core_paths) in paths.iter_mut().enumerate() {
                        if core.is_some_and(|k| k != c) {
                            continue;
                        }
                        for k in [AccessKind::Data, AccessKind::Instruction] {
                            if kind.is_none_or(|want| want == k) {
                                core_paths[kind_slot(k)].push(id);
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            caches,
            info,
            paths,
            private,
            threads_per_core: cfg.threads_per_core,
            memory: MemoryModel {
                access_latency_cycles: cfg.memory_latency,
            },
            ts_mask: (1u64 << cfg.timestamp_bits) - 1,
            level_latency: cfg.levels.iter().map(|l| l.hit_latency).collect(),
            memory_writebacks: 0,
        })
    }

    pub fn caches(&self) -> &[Cache] {
        &self.caches
    }

    pub fn cache(&self, id: CacheId) -> &Cache {
        &self.caches[id.0]
    }

    pub fn cache_mut(&mut self, id: CacheId) -> &mut Cache {
        &mut self.caches[id.0]
    }

    pub fn info(&self, id: CacheId) -> &CacheInfo {
        &self.info[id.0]
    }

    pub fn cache_ids(&self) -> impl Iterator<Item = CacheId> {
        (0..self.caches.len()).map(CacheId)
    }

    pub fn memory(&self) -> MemoryModel {
        self.memory
    }

    pub fn num_contexts(&self) -> usize {
        self.paths.len() * self.threads_per_core
    }

    pub fn memory_writebacks(&self) -> u64 {
        self.memory_writebacks
    }

    pub fn wrap(&self, cycle: u64) -> u32 {
        (cycle & self.ts_mask) as u32
    }

    pub fn path(&self, ctx: usize, kind: AccessKind) -> &[CacheId] {
        &self.paths[ctx / self.threads_per_core][kind_slot(kind)]
    }

    /// Every cache a context can reach, data and instruction sides merged.
    pub fn reachable(&self, ctx: usize) -> Vec<CacheId> {
        let core = &self.paths[ctx / self.threads_per_core];
        let mut ids: Vec<CacheId> = core[0].iter().chain(&core[1]).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// The s-bit column a hardware context owns in a cache.
    pub fn sbit_column(&self, id: CacheId, ctx: usize) -> usize {
        if self.private[id.0] {
            ctx % self.threads_per_core
        } else {
            ctx
        }
    }

    pub fn hit_latency(&self, id: CacheId) -> u64 {
        self.caches[id.0].geometry.hit_latency_cycles
    }

    pub fn service_latency(&self, path: &[CacheId], served: ServedBy) -> u64 {
        match served {
            ServedBy::Level(i) => self.hit_latency(path[i]),
            ServedBy::Memory => self.memory.access_latency_cycles,
        }
    }

    /// Fills path levels `0..upto` that do not hold the line, deepest first.
    /// Returns write-back cycles caused by dirty victims.
    pub fn fill_absent_above(
        &mut self,
        path: &[CacheId],
        upto: usize,
        addr: Addr,
        ctx: usize,
        tc: u32,
    ) -> u64 {
        let mut wb = 0;
        for i in (0..upto).rev() {
            let id = path[i];
            if self.caches[id.0].contains(addr) {
                continue;
            }
            let col = self.sbit_column(id, ctx);
            if let Some(ev) = self.caches[id.0].fill(addr, col, tc) {
                if ev.dirty {
                    wb += self.write_back(&path[i + 1..], ev.addr);
                }
            }
        }
        wb
    }

    /// Writes a dirty line to the next level holding it, else to memory.
    fn write_back(&mut self, below: &[CacheId], addr: Addr) -> u64 {
        if let Some(&next) = below.first() {
            if let Some((set, way)) = self.caches[next.0].lookup(addr) {
                self.caches[next.0].mark_dirty(set, way);
                return self.hit_latency(next);
            }
        }
        self.memory_writebacks += 1;
        self.memory.access_latency_cycles
    }

    /// Plain cache access: served by the first level holding the line.
    pub fn access(&mut self, ctx: usize, addr: Addr, kind: AccessKind, write: bool, now: u64) -> BaselineOutcome {
        let path = self.path(ctx, kind).to_vec();
        let mut levels = vec![LevelClass::NotAccessed; path.len()];
        let mut served = ServedBy::Memory;
        for (i, &id) in path.iter().enumerate() {
            match self.caches[id.0].lookup(addr) {
                Some((set, way)) => {
                    levels[i] = LevelClass::Hit;
                    self.caches[id.0].touch_lru(set, way);
                    served = ServedBy::Level(i);
                    break;
                }
                None => levels[i] = LevelClass::Miss,
            }
        }
        let latency = self.service_latency(&path, served);
        let upto = match served {
            ServedBy::Level(i) => i,
            ServedBy::Memory => path.len(),
        };
        let tc = self.wrap(now + latency);
        let writeback_cycles = self.fill_absent_above(&path, upto, addr, ctx, tc);
        if write {
            self.mark_top_dirty(&path, addr);
        }
        BaselineOutcome {
            levels,
            latency,
            writeback_cycles,
            served_by: served,
        }
    }

    pub(crate) fn mark_top_dirty(&mut self, path: &[CacheId], addr: Addr) {
        let top = path[0];
        let (set, way) = self.caches[top.0]
            .lookup(addr)
            .expect("line resident at top level after access");
        self.caches[top.0].mark_dirty(set, way);
    }

    /// Removes the line from every cache in the system.
    ///
    /// With `constant_time` the latency covers every level on `path` plus a
    /// memory write-back whether or not the line was present.
    pub fn flush(&mut self, path: &[CacheId], addr: Addr, constant_time: bool) -> FlushOutcome {
        let mut found_levels = vec![false; self.level_latency.len()];
        let mut dirty = false;
        for cache in &mut self.caches {
            if let Some((set, way)) = cache.lookup(addr) {
                found_levels[cache.geometry.level_id] = true;
                dirty |= cache.evict_or_invalidate(set, way).dirty;
            }
        }
        if dirty {
            self.memory_writebacks += 1;
        }
        let issue = self.level_latency[0];
        let mem = self.memory.access_latency_cycles;
        let latency = if constant_time {
            issue + path.iter().map(|&id| self.hit_latency(id)).sum::<u64>() + mem
        } else {
            let probed: u64 = found_levels
                .iter()
                .zip(&self.level_latency)
                .filter(|(f, _)| **f)
                .map(|(_, l)| *l)
                .sum();
            issue + probed + if dirty { mem } else { 0 }
        };
        FlushOutcome {
            latency,
            levels_found: found_levels.iter().filter(|f| **f).count(),
            wrote_back: dirty,
        }
    }
}

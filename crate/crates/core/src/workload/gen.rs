//! Synthetic scenario generators. All are pure functions of their inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::trace::{AccessEvent, Op, Pid};
use crate::cache::Addr;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("victim touches line {line}, but the shared array has {lines} lines")]
    TouchOutOfRange { line: usize, lines: usize },
    #[error("victim function addresses must map to distinct cache lines")]
    AliasedFunctions,
    #[error("{0} must be positive")]
    Zero(&'static str),
}

const LINE: u64 = 64;

/// A trace plus the secret it encodes and which probe decides each bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackScenario {
    pub trace: Vec<AccessEvent>,
    pub secret: Vec<bool>,
    /// Sequence number of the PROBE that reveals `secret[i]`.
    pub decisive_probes: Vec<u64>,
}

/// Appends events with consecutive sequence numbers.
struct Emitter {
    events: Vec<AccessEvent>,
    seq: u64,
}

impl Emitter {
    fn new() -> Self {
        Self {
            events: Vec::new(),
            seq: 0,
        }
    }

    fn sched(&mut self, pid: Pid, ctx: usize) {
        self.seq += 1;
        self.events.push(AccessEvent::sched(self.seq, pid, ctx));
    }

    fn mem(&mut self, pid: Pid, ctx: usize, op: Op, addr: Addr) -> u64 {
        self.seq += 1;
        self.events.push(AccessEvent::mem(self.seq, pid, ctx, op, addr));
        self.seq
    }
}

/// Who runs where. With distinct contexts both parties are scheduled once and
/// run side by side; with one context they take turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub attacker_pid: Pid,
    pub victim_pid: Pid,
    pub attacker_ctx: usize,
    pub victim_ctx: usize,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            attacker_pid: 1,
            victim_pid: 2,
            attacker_ctx: 0,
            victim_ctx: 0,
        }
    }
}

impl Placement {
    fn shared_ctx(&self) -> bool {
        self.attacker_ctx == self.victim_ctx
    }

    fn start(&self, em: &mut Emitter) {
        if !self.shared_ctx() {
            em.sched(self.attacker_pid, self.attacker_ctx);
            em.sched(self.victim_pid, self.victim_ctx);
        }
    }

    fn to_attacker(&self, em: &mut Emitter) {
        if self.shared_ctx() {
            em.sched(self.attacker_pid, self.attacker_ctx);
        }
    }

    fn to_victim(&self, em: &mut Emitter) {
        if self.shared_ctx() {
            em.sched(self.victim_pid, self.victim_ctx);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicroParams {
    pub lines: usize,
    pub base_addr: Addr,
    pub victim_touches: Vec<usize>,
    /// Writes per touched line.
    pub victim_writes: usize,
    pub placement: Placement,
}

impl Default for MicroParams {
    fn default() -> Self {
        Self {
            lines: 256,
            base_addr: 0x10_0000,
            victim_touches: (0..256).collect(),
            victim_writes: 4,
            placement: Placement::default(),
        }
    }
}

/// Shared-array microbenchmark: the attacker flushes the array and yields,
/// the victim writes a subset of it, the attacker times a read of every line.
pub fn gen_microbenchmark(p: &MicroParams) -> Result<AttackScenario, WorkloadError> {
    if p.lines == 0 {
        return Err(WorkloadError::Zero("lines"));
    }
    if let Some(&line) = p.victim_touches.iter().find(|&&l| l >= p.lines) {
        return Err(WorkloadError::TouchOutOfRange { line, lines: p.lines });
    }
    let pl = p.placement;
    let addr = |i: usize| p.base_addr + i as u64 * LINE;
    let mut em = Emitter::new();
    pl.start(&mut em);
    pl.to_attacker(&mut em);
    for i in 0..p.lines {
        em.mem(pl.attacker_pid, pl.attacker_ctx, Op::Flush, addr(i));
    }
    pl.to_victim(&mut em);
    for _ in 0..p.victim_writes.max(1) {
        for &i in &p.victim_touches {
            em.mem(pl.victim_pid, pl.victim_ctx, Op::Write, addr(i));
        }
    }
    pl.to_attacker(&mut em);
    let decisive_probes = (0..p.lines)
        .map(|i| em.mem(pl.attacker_pid, pl.attacker_ctx, Op::Probe, addr(i)))
        .collect();
    let mut secret = vec![false; p.lines];
    for &i in &p.victim_touches {
        secret[i] = true;
    }
    Ok(AttackScenario {
        trace: em.events,
        secret,
        decisive_probes,
    })
}

/// Square-and-multiply victim: per key bit it runs Square-Reduce, plus
/// Multiply-Reduce when the bit is set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaVictimSpec {
    pub key_bits: Vec<bool>,
    pub square_addr: Addr,
    pub multiply_addr: Addr,
    pub reduce_addr: Addr,
    pub iterations_per_bit: usize,
    pub placement: Placement,
}

impl RsaVictimSpec {
    pub fn new(key_bits: Vec<bool>) -> Self {
        Self {
            key_bits,
            square_addr: 0x40_0000,
            multiply_addr: 0x40_1040,
            reduce_addr: 0x40_2080,
            iterations_per_bit: 1,
            placement: Placement::default(),
        }
    }

    /// Uniformly random key from `seed`.
    pub fn random_key(len: usize, seed: u64) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen()).collect()
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let lines = [self.square_addr, self.multiply_addr, self.reduce_addr].map(|a| a / LINE);
        if lines[0] == lines[1] || lines[1] == lines[2] || lines[0] == lines[2] {
            return Err(WorkloadError::AliasedFunctions);
        }
        if self.iterations_per_bit == 0 {
            return Err(WorkloadError::Zero("iterations_per_bit"));
        }
        Ok(())
    }
}

/// One round per key bit: attacker flushes the three functions, victim
/// processes the bit with instruction fetches, attacker probes all three.
pub fn gen_rsa_attack(spec: &RsaVictimSpec) -> Result<AttackScenario, WorkloadError> {
    spec.validate()?;
    let pl = spec.placement;
    let funcs = [spec.square_addr, spec.multiply_addr, spec.reduce_addr];
    let mut em = Emitter::new();
    let mut decisive = Vec::with_capacity(spec.key_bits.len());
    pl.start(&mut em);
    for &bit in &spec.key_bits {
        pl.to_attacker(&mut em);
        for &f in &funcs {
            em.mem(pl.attacker_pid, pl.attacker_ctx, Op::Flush, f);
        }
        pl.to_victim(&mut em);
        for _ in 0..spec.iterations_per_bit {
            let mut seq = vec![spec.square_addr, spec.reduce_addr];
            if bit {
                seq.extend([spec.multiply_addr, spec.reduce_addr]);
            }
            for f in seq {
                em.mem(pl.victim_pid, pl.victim_ctx, Op::Fetch, f);
            }
        }
        pl.to_attacker(&mut em);
        for &f in &funcs {
            let s = em.mem(pl.attacker_pid, pl.attacker_ctx, Op::Probe, f);
            if f == spec.multiply_addr {
                decisive.push(s);
            }
        }
    }
    Ok(AttackScenario {
        trace: em.events,
        secret: spec.key_bits.clone(),
        decisive_probes: decisive,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundParams {
    pub nprocs: usize,
    /// Private lines per process.
    pub footprint_lines: usize,
    /// Lines of a shared-library region every process touches.
    pub shared_lines: usize,
    pub accesses: usize,
    /// Accesses per scheduling slice.
    pub switch_every: usize,
    /// Probability that an access goes to the shared region.
    pub shared_fraction: f64,
    /// Fraction of shared-region accesses that are instruction fetches.
    pub fetch_fraction: f64,
    /// Fraction of data accesses that are writes.
    pub write_fraction: f64,
    /// Index skew: 1.0 is uniform, larger favors low indices.
    pub skew: f64,
    /// When non-zero, shared accesses fall in a window of this many lines
    /// that jumps forward by its own size every `window_dwell` accesses,
    /// cycling through the region. Models processes running the same code
    /// phases.
    pub shared_window: usize,
    pub window_dwell: usize,
    /// Hardware contexts the processes are spread over.
    pub contexts: usize,
    pub seed: u64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            nprocs: 2,
            footprint_lines: 4096,
            shared_lines: 1024,
            accesses: 100_000,
            switch_every: 5_000,
            shared_fraction: 0.3,
            fetch_fraction: 0.5,
            write_fraction: 0.2,
            skew: 1.0,
            shared_window: 0,
            window_dwell: 0,
            contexts: 1,
            seed: 1,
        }
    }
}

impl BackgroundParams {
    /// Workload for LLC sweeps: 4 processes with 1 MiB private footprints
    /// and a 2.5 MiB shared region they walk through together in 64 KiB
    /// phases, 6.5 MiB in total. Shared lines are evicted between passes at
    /// small LLC sizes and survive at large ones.
    pub fn sweep_default(seed: u64) -> Self {
        Self {
            nprocs: 4,
            footprint_lines: 16384,
            shared_lines: 40960,
            accesses: 1_500_000,
            switch_every: 1_000,
            shared_fraction: 0.95,
            shared_window: 1024,
            window_dwell: 16_000,
            seed,
            ..Self::default()
        }
    }

    pub fn footprint_bytes(&self) -> u64 {
        ((self.nprocs * self.footprint_lines + self.shared_lines) as u64) * LINE
    }
}

pub const SHARED_BASE: Addr = 0x7f00_0000_0000;

pub fn private_base(pid: Pid) -> Addr {
    (u64::from(pid) + 1) << 36
}

/// Mixed multi-process workload with private footprints and a shared region.
pub fn gen_background(p: &BackgroundParams) -> Result<Vec<AccessEvent>, WorkloadError> {
    if p.nprocs == 0 {
        return Err(WorkloadError::Zero("nprocs"));
    }
    if p.contexts == 0 {
        return Err(WorkloadError::Zero("contexts"));
    }
    if p.switch_every == 0 {
        return Err(WorkloadError::Zero("switch_every"));
    }
    if p.shared_window > 0 && p.window_dwell == 0 {
        return Err(WorkloadError::Zero("window_dwell"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let contexts = p.contexts.min(p.nprocs);
    // Processes are homed on ctx = index % contexts.
    let homed: Vec<Vec<Pid>> = (0..contexts)
        .map(|c| (0..p.nprocs).filter(|i| i % contexts == c).map(|i| i as Pid + 1).collect())
        .collect();
    let mut turn = vec![0usize; contexts];
    let mut used = vec![p.switch_every; contexts];
    let mut em = Emitter::new();
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> u64 {
        let u: f64 = rng.gen();
        ((u.powf(p.skew) * n as f64) as usize).min(n - 1) as u64
    };
    for step in 0..p.accesses {
        let ctx = step % contexts;
        if used[ctx] >= p.switch_every {
            let procs = &homed[ctx];
            let pid = procs[turn[ctx] % procs.len()];
            turn[ctx] += 1;
            used[ctx] = 0;
            let current = em.events.iter().rev().find(|e| e.op == Op::Sched && e.ctx == ctx).map(|e| e.pid);
            if current != Some(pid) {
                em.sched(pid, ctx);
            }
        }
        used[ctx] += 1;
        let pid = homed[ctx][(turn[ctx] - 1) % homed[ctx].len()];
        let shared = p.shared_lines > 0 && (p.footprint_lines == 0 || rng.gen_bool(p.shared_fraction.clamp(0.0, 1.0)));
        let (addr, op) = if shared {
            let line = if p.shared_window > 0 {
                let w = p.shared_window.min(p.shared_lines);
                let start = (step / p.window_dwell) * w;
                (start as u64 + pick(&mut rng, w)) % p.shared_lines as u64
            } else {
                pick(&mut rng, p.shared_lines)
            };
            let addr = SHARED_BASE + line * LINE;
            if rng.gen_bool(p.fetch_fraction.clamp(0.0, 1.0)) {
                (addr, Op::Fetch)
            } else {
                (addr, Op::Read)
            }
        } else if p.footprint_lines > 0 {
            let addr = private_base(pid) + pick(&mut rng, p.footprint_lines) * LINE;
            if rng.gen_bool(p.write_fraction.clamp(0.0, 1.0)) {
                (addr, Op::Write)
            } else {
                (addr, Op::Read)
            }
        } else {
            continue;
        };
        em.mem(pid, ctx, op, addr);
    }
    Ok(em.events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{parse_trace, write_trace};

    #[test]
    fn micro_shape() {
        let s = gen_microbenchmark(&MicroParams::default()).unwrap();
        let count = |op| s.trace.iter().filter(|e| e.op == op).count();
        assert_eq!(count(Op::Flush), 256);
        assert_eq!(count(Op::Write), 256 * 4);
        assert_eq!(count(Op::Probe), 256);
        assert_eq!(count(Op::Sched), 3);
        assert_eq!(s.decisive_probes.len(), 256);
        assert!(s.secret.iter().all(|&b| b));
        parse_trace(&write_trace(&s.trace)).unwrap();
    }

    #[test]
    fn micro_rejects_out_of_range_touch() {
        let p = MicroParams {
            victim_touches: vec![3, 256],
            ..MicroParams::default()
        };
        assert_eq!(
            gen_microbenchmark(&p),
            Err(WorkloadError::TouchOutOfRange { line: 256, lines: 256 })
        );
    }

    #[test]
    fn rsa_round_shape_is_linear() {
        let key = vec![true, false, true];
        let s = gen_rsa_attack(&RsaVictimSpec::new(key.clone())).unwrap();
        let fetches = s.trace.iter().filter(|e| e.op == Op::Fetch).count();
        assert_eq!(fetches, 4 + 2 + 4);
        // Per round: 3 SCHED + 3 F + 3 PROBE, plus the victim's fetches.
        assert_eq!(s.trace.len(), 3 * 9 + fetches);
        assert_eq!(s.decisive_probes.len(), 3);
        let spec = RsaVictimSpec::new(vec![false; 1]);
        let zero = gen_rsa_attack(&spec).unwrap();
        assert!(zero.trace.iter().all(|e| !(e.op == Op::Fetch && e.addr == Some(spec.multiply_addr))));
    }

    #[test]
    fn rsa_rejects_aliased_functions() {
        let mut spec = RsaVictimSpec::new(vec![true]);
        spec.reduce_addr = spec.square_addr + 8;
        assert_eq!(gen_rsa_attack(&spec), Err(WorkloadError::AliasedFunctions));
    }

    #[test]
    fn cross_context_placement_schedules_once() {
        let mut spec = RsaVictimSpec::new(vec![true, false]);
        spec.placement.victim_ctx = 1;
        let s = gen_rsa_attack(&spec).unwrap();
        assert_eq!(s.trace.iter().filter(|e| e.op == Op::Sched).count(), 2);
        parse_trace(&write_trace(&s.trace)).unwrap();
    }

    #[test]
    fn background_is_deterministic() {
        let p = BackgroundParams {
            accesses: 5000,
            contexts: 2,
            nprocs: 3,
            switch_every: 300,
            ..BackgroundParams::default()
        };
        let a = write_trace(&gen_background(&p).unwrap());
        let b = write_trace(&gen_background(&p).unwrap());
        assert_eq!(a, b);
        let parsed = parse_trace(&a).unwrap();
        assert_eq!(parsed.iter().filter(|e| e.op != Op::Sched).count(), 5000);
        let other = write_trace(&gen_background(&BackgroundParams { seed: 2, ..p }).unwrap());
        assert_ne!(a, other);
    }

    #[test]
    fn random_key_is_seeded() {
        assert_eq!(RsaVictimSpec::random_key(64, 7), RsaVictimSpec::random_key(64, 7));
        assert_ne!(RsaVictimSpec::random_key(64, 7), RsaVictimSpec::random_key(64, 8));
    }
}

//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::process::{Command, ExitCode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timecache::bitserial::TransposeArray;
use timecache::cache::{AccessKind, Hierarchy, LevelClass};
use timecache::config::{ByteSize, LevelSpec, RunConfig};
use timecache::harness::{flushed_probe_hits, run_attack, run_overhead, run_sensitivity, ConfigPair};
use timecache::timecache::{rollover_detected, Simulator, StepResult, SwitchCostModel};
use timecache::workload::{
    gen_background, gen_microbenchmark, gen_rsa_attack, AccessEvent, AttackScenario, BackgroundParams, MicroParams,
    Op, Pid, RsaVictimSpec,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Random traces and small configs shared by criteria 3, 5 and 7.

fn level(name: &str, sets: u64, ways: usize, lat: u64, split: bool, private: bool) -> LevelSpec {
    LevelSpec {
        name: name.into(),
        size: ByteSize(sets * ways as u64 * 64),
        line_size: 64,
        associativity: ways,
        hit_latency: lat,
        split,
        private,
    }
}

/// Tiny hierarchies so that a few dozen lines cause constant evictions.
fn small_configs() -> Vec<RunConfig> {
    let base = RunConfig {
        switch_cost_charged: false,
        ..RunConfig::default()
    };
    vec![
        RunConfig {
            cores: 1,
            threads_per_core: 2,
            levels: vec![level("L1", 4, 2, 2, true, true), level("LLC", 8, 4, 20, false, false)],
            ..base.clone()
        },
        RunConfig {
            cores: 2,
            threads_per_core: 1,
            levels: vec![
                level("L1", 2, 2, 2, false, true),
                level("L2", 4, 2, 10, false, true),
                level("LLC", 8, 4, 30, false, false),
            ],
            ..base.clone()
        },
        RunConfig {
            cores: 2,
            threads_per_core: 2,
            levels: vec![level("L1", 2, 2, 2, true, true), level("LLC", 4, 4, 20, false, false)],
            switch_cost_charged: true,
            ..base
        },
    ]
}

fn random_trace(rng: &mut ChaCha8Rng, contexts: usize, nprocs: u32, len: usize) -> Vec<AccessEvent> {
    let pool: Vec<u64> = (0..24).map(|i| (i * 5 % 64) * 64).collect();
    let mut running: Vec<Option<Pid>> = vec![None; contexts];
    let mut out = Vec::with_capacity(len);
    for seq in 1..=len as u64 {
        let busy: Vec<usize> = (0..contexts).filter(|&c| running[c].is_some()).collect();
        if busy.is_empty() || rng.gen_bool(0.12) {
            let pid = rng.gen_range(1..=nprocs);
            let ctx = rng.gen_range(0..contexts);
            for slot in running.iter_mut() {
                if *slot == Some(pid) {
                    *slot = None;
                }
            }
            running[ctx] = Some(pid);
            out.push(AccessEvent::sched(seq, pid, ctx));
            continue;
        }
        let ctx = busy[rng.gen_range(0..busy.len())];
        let op = match rng.gen_range(0..100) {
            0..=34 => Op::Read,
            35..=54 => Op::Write,
            55..=74 => Op::Fetch,
            75..=84 => Op::Flush,
            _ => Op::Probe,
        };
        let addr = pool[rng.gen_range(0..pool.len())] + rng.gen_range(0..64);
        out.push(AccessEvent::mem(seq, running[ctx].unwrap(), ctx, op, addr));
    }
    out
}

// ---------------------------------------------------------------------------
// Last-toucher oracle: its own LRU residency model, where each resident line
// remembers which processes have touched it since it was filled.

struct OracleLine {
    line: u64,
    touchers: BTreeSet<Pid>,
    residency: u64,
}

struct OracleCache {
    sets: Vec<VecDeque<OracleLine>>,
    ways: usize,
}

impl OracleCache {
    fn slot(&self, line: u64) -> usize {
        (line % self.sets.len() as u64) as usize
    }

    fn find(&self, line: u64) -> Option<usize> {
        self.sets[self.slot(line)].iter().position(|l| l.line == line)
    }
}

#[derive(Default)]
struct OracleReport {
    accesses: u64,
    wrongly_granted_hits: u64,
    repeated_first_access: u64,
    mismatches: u64,
    tolerated_extra_first_access: u64,
    first_message: Option<String>,
}

struct Oracle {
    caches: Vec<OracleCache>,
    /// Per ctx: [data path, instruction path].
    paths: Vec<[Vec<usize>; 2]>,
    defense: bool,
    tolerant: bool,
    residencies: u64,
    first_accesses: BTreeMap<(Pid, usize, u64), u32>,
    report: OracleReport,
}

impl Oracle {
    fn new(cfg: &RunConfig, tolerant: bool) -> Self {
        let mut caches = Vec::new();
        let contexts = cfg.cores * cfg.threads_per_core;
        let mut paths: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; contexts];
        for spec in &cfg.levels {
            let sets = (spec.size.0 / (spec.line_size * spec.associativity as u64)) as usize;
            let instances = if spec.private { cfg.cores } else { 1 };
            for inst in 0..instances {
                let mut make = || {
                    caches.push(OracleCache {
                        sets: (0..sets).map(|_| VecDeque::new()).collect(),
                        ways: spec.associativity,
                    });
                    caches.len() - 1
                };
                let d = make();
                let i = if spec.split { make() } else { d };
                for (ctx, p) in paths.iter_mut().enumerate() {
                    let core = ctx / cfg.threads_per_core;
                    if !spec.private || core == inst {
                        p[0].push(d);
                        p[1].push(i);
                    }
                }
            }
        }
        Self {
            caches,
            paths,
            defense: cfg.defense,
            tolerant,
            residencies: 0,
            first_accesses: BTreeMap::new(),
            report: OracleReport::default(),
        }
    }

    fn violation(&mut self, msg: String) {
        if self.report.first_message.is_none() {
            self.report.first_message = Some(msg);
        }
    }

    fn access(&mut self, ev: &AccessEvent, kind: AccessKind, sim: &[LevelClass]) {
        self.report.accesses += 1;
        let pid = ev.pid;
        let line = ev.addr.unwrap() / 64;
        let side = match kind {
            AccessKind::Data => 0,
            AccessKind::Instruction => 1,
        };
        let path = self.paths[ev.ctx][side].clone();
        let pos: Vec<Option<usize>> = path.iter().map(|&c| self.caches[c].find(line)).collect();
        let first = pos.iter().position(Option::is_some);
        let upto = first.unwrap_or(path.len());
        let mut expect = vec![LevelClass::NotAccessed; path.len()];
        expect[..upto].fill(LevelClass::Miss);
        if let Some(f) = first {
            if !self.defense {
                expect[f] = LevelClass::Hit;
            } else {
                for i in f..path.len() {
                    let Some(way) = pos[i] else {
                        expect[i] = LevelClass::Bypassed;
                        continue;
                    };
                    let c = path[i];
                    let slot = self.caches[c].slot(line);
                    let entry = &mut self.caches[c].sets[slot][way];
                    if entry.touchers.contains(&pid) {
                        if self.tolerant && sim.get(i) == Some(&LevelClass::FirstAccessMiss) {
                            expect[i] = LevelClass::FirstAccessMiss;
                            self.report.tolerated_extra_first_access += 1;
                            continue;
                        }
                        expect[i] = LevelClass::Hit;
                        break;
                    }
                    expect[i] = LevelClass::FirstAccessMiss;
                    entry.touchers.insert(pid);
                    let n = self.first_accesses.entry((pid, c, entry.residency)).or_default();
                    *n += 1;
                    if *n > 1 {
                        self.report.repeated_first_access += 1;
                    }
                }
            }
            let c = path[f];
            let slot = self.caches[c].slot(line);
            let set = &mut self.caches[c].sets[slot];
            let entry = set.remove(pos[f].unwrap()).unwrap();
            set.push_back(entry);
        }
        for &c in &path[..upto] {
            if self.caches[c].find(line).is_some() {
                continue;
            }
            self.residencies += 1;
            let slot = self.caches[c].slot(line);
            let ways = self.caches[c].ways;
            let set = &mut self.caches[c].sets[slot];
            if set.len() == ways {
                set.pop_front();
            }
            set.push_back(OracleLine {
                line,
                touchers: BTreeSet::from([pid]),
                residency: self.residencies,
            });
        }
        for (i, (&want, &got)) in expect.iter().zip(sim).enumerate() {
            if want == got {
                continue;
            }
            if got == LevelClass::Hit {
                self.report.wrongly_granted_hits += 1;
            }
            self.report.mismatches += 1;
            self.violation(format!("event {ev}: level {i} simulator={got} oracle={want}"));
        }
    }

    fn flush(&mut self, addr: u64) {
        let line = addr / 64;
        for c in 0..self.caches.len() {
            if let Some(way) = self.caches[c].find(line) {
                let slot = self.caches[c].slot(line);
                self.caches[c].sets[slot].remove(way);
            }
        }
    }
}

struct OracleRun {
    report: OracleReport,
    cycles: u64,
}

fn oracle_run(cfg: &RunConfig, trace: &[AccessEvent], tolerant: bool) -> OracleRun {
    let mut sim = Simulator::new(cfg).expect("valid config");
    let mut oracle = Oracle::new(cfg, tolerant);
    for ev in trace {
        let res = sim.step(ev).expect("valid trace");
        match (ev.op, res) {
            (Op::Flush, _) => oracle.flush(ev.addr.unwrap()),
            (Op::Sched, _) => {}
            (op, StepResult::Access(out)) => {
                let (kind, _) = op.access_kind().unwrap();
                oracle.access(ev, kind, &out.classes());
            }
            _ => unreachable!(),
        }
    }
    OracleRun {
        report: oracle.report,
        cycles: sim.clock().now(),
    }
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let pair = ConfigPair::from_base(&RunConfig::default());
    let micro = gen_microbenchmark(&MicroParams::default()).map_err(|e| e.to_string())?;
    let (b, d) = run_attack(&micro, &pair, None).map_err(|e| e.to_string())?;
    ensure(b.hits_observed == 256 && d.hits_observed == 0, || {
        format!("micro: baseline hits {} defense hits {}", b.hits_observed, d.hits_observed)
    })?;
    ensure(flushed_probe_hits(&micro.trace, &d, 64).is_empty(), || "micro: flushed line hit".into())?;

    for seed in 1..=20u64 {
        let key = RsaVictimSpec::random_key(64, seed);
        for victim_ctx in [0usize, 1] {
            let mut spec = RsaVictimSpec::new(key.clone());
            spec.placement.victim_ctx = victim_ctx;
            let s = gen_rsa_attack(&spec).map_err(|e| e.to_string())?;
            let (b, d) = run_attack(&s, &pair, None).map_err(|e| e.to_string())?;
            ensure(b.accuracy == 1.0 && d.hits_observed == 0, || {
                format!(
                    "rsa seed {seed} victim ctx {victim_ctx}: baseline accuracy {} defense hits {}",
                    b.accuracy, d.hits_observed
                )
            })?;
            ensure(flushed_probe_hits(&s.trace, &d, 64).is_empty(), || {
                format!("rsa seed {seed}: flushed line hit under defense")
            })?;
        }
    }

    // 100 fuzzed attacker/victim interleavings over two cores with SMT.
    let cfg = RunConfig {
        cores: 2,
        ..RunConfig::default()
    };
    let pair = ConfigPair::from_base(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0xa77ac);
    let mut baseline_leaks = 0usize;
    for round in 0..100 {
        let trace = fuzz_attack(&mut rng, cfg.num_contexts(), 400);
        let probes = trace.iter().filter(|e| e.op == Op::Probe).count();
        let s = AttackScenario {
            trace,
            secret: vec![false; probes],
            decisive_probes: vec![],
        };
        let (b, d) = run_attack(&s, &pair, None).map_err(|e| e.to_string())?;
        baseline_leaks += flushed_probe_hits(&s.trace, &b, 64).len();
        let leaks = flushed_probe_hits(&s.trace, &d, 64);
        ensure(leaks.is_empty(), || format!("fuzz round {round}: defense hit on flushed lines at {leaks:?}"))?;
    }
    ensure(baseline_leaks > 0, || "fuzzing never produced a baseline leak".into())?;

    let exe = env!("CARGO_BIN_EXE_timecache");
    for args in [&["attack", "micro"][..], &["attack", "rsa", "--key-bits", "64", "--seed", "7"][..]] {
        let out = Command::new(exe).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.code() == Some(0), || format!("`timecache {}` exited {:?}", args.join(" "), out.status))?;
    }
    Ok(format!(
        "micro 256/0 hits, rsa 20 seeds x 2 placements accuracy 1.0 / 0 hits, 100 fuzz rounds clean ({baseline_leaks} baseline leaks)"
    ))
}

fn fuzz_attack(rng: &mut ChaCha8Rng, contexts: usize, len: usize) -> Vec<AccessEvent> {
    let shared: Vec<u64> = (0..8).map(|i| 0x9000 + i * 64).collect();
    let (attacker, victim) = (1, 2);
    let mut running: Vec<Option<Pid>> = vec![None; contexts];
    let mut out = Vec::new();
    let mut seq = 0;
    let mut push = |out: &mut Vec<AccessEvent>, mut e: AccessEvent| {
        seq += 1;
        e.seq = seq;
        out.push(e);
    };
    while out.len() < len {
        let where_is = |running: &Vec<Option<Pid>>, p| running.iter().position(|&r| r == Some(p));
        if rng.gen_bool(0.1) || where_is(&running, attacker).is_none() || where_is(&running, victim).is_none() {
            let pid = if rng.gen_bool(0.5) { attacker } else { victim };
            let ctx = rng.gen_range(0..contexts);
            for slot in running.iter_mut() {
                if *slot == Some(pid) {
                    *slot = None;
                }
            }
            running[ctx] = Some(pid);
            push(&mut out, AccessEvent::sched(0, pid, ctx));
            continue;
        }
        let addr = shared[rng.gen_range(0..shared.len())];
        if rng.gen_bool(0.5) {
            let ctx = where_is(&running, attacker).unwrap();
            let op = if rng.gen_bool(0.5) { Op::Flush } else { Op::Probe };
            push(&mut out, AccessEvent::mem(0, attacker, ctx, op, addr));
        } else {
            let ctx = where_is(&running, victim).unwrap();
            let op = if rng.gen_bool(0.5) { Op::Read } else { Op::Fetch };
            push(&mut out, AccessEvent::mem(0, victim, ctx, op, addr));
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let mut mismatches = 0u64;
    let mut pairs = 0u64;
    let mut check = |tcs: &[u32], ts: u32, bits: u32, pairs: &mut u64| -> Result<(), String> {
        let mut a = TransposeArray::new(tcs.len(), bits, 2);
        for (col, &tc) in tcs.iter().enumerate() {
            a.fill_column(col, tc, 1).map_err(|e| e.to_string())?;
        }
        let out = a.compare_and_reset(ts, 1).map_err(|e| e.to_string())?;
        ensure(out.iterations == bits, || format!("{} iterations at width {bits}", out.iterations))?;
        for (col, &tc) in tcs.iter().enumerate() {
            *pairs += 1;
            let want = tc > ts;
            if out.reset_mask.get(col) != want || a.read_sbit(col, 1).unwrap() == want {
                mismatches += 1;
            }
        }
        Ok(())
    };
    let all: Vec<u32> = (0..256).collect();
    for ts in 0..256 {
        check(&all, ts, 8, &mut pairs)?;
    }
    let exhaustive = pairs;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..100 {
        let mut tcs: Vec<u32> = (0..1024).map(|_| rng.gen()).collect();
        tcs[..4].copy_from_slice(&[0, 1, u32::MAX, u32::MAX - 1]);
        let ts = rng.gen();
        tcs[4] = ts;
        check(&tcs, ts, 32, &mut pairs)?;
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok(format!("{exhaustive} 8-bit pairs and {} 32-bit pairs, 0 mismatches", pairs - exhaustive))
}

fn oracle_sweep(timestamp_bits: u32, traces: usize, tolerant: bool, seed: u64) -> Result<(OracleReport, u64, u64), String> {
    let configs = small_configs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = OracleReport::default();
    let mut min_cycles = u64::MAX;
    let mut events = 0u64;
    for i in 0..traces {
        let cfg = RunConfig {
            timestamp_bits,
            ..configs[i % configs.len()].clone()
        };
        let nprocs = rng.gen_range(2..=5);
        let trace = random_trace(&mut rng, cfg.num_contexts(), nprocs, 160);
        events += trace.len() as u64;
        let run = oracle_run(&cfg, &trace, tolerant);
        min_cycles = min_cycles.min(run.cycles);
        let r = run.report;
        total.accesses += r.accesses;
        total.wrongly_granted_hits += r.wrongly_granted_hits;
        total.repeated_first_access += r.repeated_first_access;
        total.mismatches += r.mismatches;
        total.tolerated_extra_first_access += r.tolerated_extra_first_access;
        if total.first_message.is_none() {
            total.first_message = r.first_message.map(|m| format!("trace {i}: {m}"));
        }
    }
    Ok((total, min_cycles, events))
}

fn criterion_3() -> Outcome {
    let traces = 10_000;
    let (r, _, events) = oracle_sweep(32, traces, false, 3)?;
    ensure(
        r.wrongly_granted_hits == 0 && r.repeated_first_access == 0 && r.mismatches == 0,
        || {
            format!(
                "{} wrongly granted hits, {} repeated first accesses, {} mismatches; first: {}",
                r.wrongly_granted_hits,
                r.repeated_first_access,
                r.mismatches,
                r.first_message.clone().unwrap_or_default()
            )
        },
    )?;
    // The identity also holds on every paired run of these traces.
    let configs = small_configs();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for i in 0..200 {
        let cfg = &configs[i % configs.len()];
        let trace = random_trace(&mut rng, cfg.num_contexts(), 4, 160);
        let o = run_overhead(&trace, &ConfigPair::from_base(cfg)).map_err(|e| e.to_string())?;
        ensure(o.identity_holds, || format!("accounting identity broken on paired run {i}"))?;
    }
    Ok(format!(
        "{traces} traces, {events} events, {} accesses: 0 violations",
        r.accesses
    ))
}

fn criterion_4() -> Outcome {
    let mut rows = Vec::new();
    for (size, want) in [("64K", 2u64), ("256K", 8), ("8M", 256)] {
        let bytes = size.parse::<ByteSize>().map_err(|e| e.to_string())?.0;
        let lines = (bytes / 64) as usize;
        // One s-bit per line per context, moved in 64-byte (512-bit) blocks.
        let oracle = (lines as u64).div_ceil(512);
        let got = SwitchCostModel::sbit_copy_accesses(lines);
        ensure(got == want && oracle == want, || format!("{size}: model {got}, oracle {oracle}, expected {want}"))?;
        rows.push(format!("{size}->{got}"));
    }
    Ok(rows.join(" "))
}

fn criterion_5() -> Outcome {
    ensure(rollover_detected(98, 105, 100), || "Ts=98, now=105 (mod 100) must roll over".into())?;
    ensure(!rollover_detected(98, 99, 100), || "Ts=98, now=99 must not roll over".into())?;
    let wraps_needed = 10 * 256;
    let (r, min_cycles, _) = oracle_sweep(8, 10_000, true, 5)?;
    ensure(min_cycles >= wraps_needed, || format!("a trace spans only {min_cycles} cycles"))?;
    ensure(r.wrongly_granted_hits == 0 && r.mismatches == 0, || {
        format!(
            "{} wrongly granted hits, {} mismatches; first: {}",
            r.wrongly_granted_hits,
            r.mismatches,
            r.first_message.clone().unwrap_or_default()
        )
    })?;
    Ok(format!(
        "10000 traces at 8-bit timestamps, each >= {} wraps: 0 wrongly granted hits, {} extra first-access misses",
        min_cycles / 256,
        r.tolerated_extra_first_access
    ))
}

fn criterion_6() -> Outcome {
    let params = BackgroundParams::sweep_default(1);
    let footprint = params.footprint_bytes();
    ensure(footprint > 2 << 20 && footprint < 8 << 20, || format!("footprint {footprint} outside (2M, 8M)"))?;
    let trace = gen_background(&params).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        switch_cost_charged: false,
        ..RunConfig::default()
    };
    let r = run_sensitivity(&trace, &cfg, &[2 << 20, 4 << 20, 8 << 20]).map_err(|e| e.to_string())?;
    ensure(r.points.iter().all(|p| p.identity_holds), || "accounting identity broken".into())?;
    let shares: Vec<f64> = r.points.iter().map(|p| p.first_access_to_total_miss).collect();
    ensure(r.share_non_increasing(), || format!("shares {shares:?} increase"))?;
    ensure(r.points[2].evictions < r.points[0].evictions, || "8M does not evict less than 2M".into())?;
    Ok(format!(
        "footprint {} KiB, first-access share 2M {:.4} / 4M {:.4} / 8M {:.4}, identity exact on all pairs",
        footprint / 1024,
        shares[0],
        shares[1],
        shares[2]
    ))
}

fn criterion_7() -> Outcome {
    let configs = small_configs();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let traces = 10_000;
    for i in 0..traces {
        let cfg = configs[i % configs.len()].with_defense(false);
        let trace = random_trace(&mut rng, cfg.num_contexts(), 4, 160);
        let mut sim = Simulator::new(&cfg).map_err(|e| e.to_string())?;
        let mut plain = Hierarchy::new(&cfg).map_err(|e| e.to_string())?;
        let mut now = 0;
        for ev in &trace {
            let res = sim.step(ev).map_err(|e| e.to_string())?;
            match (ev.op, res) {
                (Op::Sched, _) => {}
                (Op::Flush, StepResult::Flush { latency }) => {
                    let path = plain.path(ev.ctx, AccessKind::Data).to_vec();
                    let f = plain.flush(&path, ev.addr.unwrap(), cfg.constant_time_flush);
                    ensure(f.latency == latency, || format!("trace {i} event {ev}: flush latency differs"))?;
                    now += latency;
                }
                (op, StepResult::Access(out)) => {
                    let (kind, write) = op.access_kind().unwrap();
                    let b = plain.access(ev.ctx, ev.addr.unwrap(), kind, write, now);
                    ensure(b.levels == out.classes() && b.latency == out.latency, || {
                        format!("trace {i} event {ev}: {:?} vs {:?}", out.classes(), b.levels)
                    })?;
                    now += b.latency + b.writeback_cycles;
                }
                _ => unreachable!(),
            }
        }
    }
    let mut ratios = Vec::new();
    for seed in 1..=5 {
        let trace = gen_background(&BackgroundParams {
            nprocs: 1,
            accesses: 20_000,
            seed,
            ..BackgroundParams::default()
        })
        .map_err(|e| e.to_string())?;
        let rt = random_trace(&mut rng, 1, 1, 2_000);
        for t in [trace, rt] {
            let cfg = RunConfig {
                switch_cost_charged: false,
                ..RunConfig::default()
            };
            let r = run_overhead(&t, &ConfigPair::from_base(&cfg)).map_err(|e| e.to_string())?;
            ratios.push(r.overhead_ratio);
        }
    }
    ensure(ratios.iter().all(|&r| r == 1.0), || format!("single-process ratios {ratios:?}"))?;
    Ok(format!(
        "{traces} traces bit-identical to the plain hierarchy; {} single-process ratios exactly 1.0",
        ratios.len()
    ))
}

fn criterion_8() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_timecache");
    let dir = std::env::temp_dir().join(format!("timecache-accept-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let trace = dir.join("bg.trace");
    let trace_s = trace.to_str().unwrap();
    let run = |args: &[&str]| -> Result<Vec<u8>, String> {
        let out = Command::new(exe).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!("`timecache {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
        })?;
        Ok(out.stdout)
    };
    run(&["gen", "background", "--accesses", "20000", "--nprocs", "3", "--seed", "4", "--out", trace_s])?;
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen", "background", "--accesses", "20000", "--nprocs", "3", "--seed", "4"],
        vec!["gen", "rsa", "--seed", "9"],
        vec!["simulate", "--trace", trace_s],
        vec!["simulate", "--trace", trace_s, "--json"],
        vec!["compare", "--trace", trace_s],
        vec!["compare", "--trace", trace_s, "--json"],
        vec!["attack", "micro", "--json"],
        vec!["attack", "rsa", "--seed", "11"],
        vec!["sweep", "--trace", trace_s, "--sizes", "256K,512K,1M"],
        vec!["inspect-array", "--tc", "3,200,17,90", "--ts", "50"],
    ];
    for c in &commands {
        let a = run(c)?;
        let b = run(c)?;
        ensure(!a.is_empty() && a == b, || format!("`timecache {}` output differs between runs", c.join(" ")))?;
    }
    // The library reports, too.
    let s = gen_microbenchmark(&MicroParams::default()).map_err(|e| e.to_string())?;
    let pair = ConfigPair::from_base(&RunConfig::default());
    let r1 = run_attack(&s, &pair, None).map_err(|e| e.to_string())?;
    let r2 = run_attack(&s, &pair, None).map_err(|e| e.to_string())?;
    ensure(r1 == r2, || "attack reports differ".into())?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("{} commands byte-identical across two runs", commands.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("security", criterion_1),
        ("comparator oracle", criterion_2),
        ("first-access accounting", criterion_3),
        ("switch cost model", criterion_4),
        ("rollover", criterion_5),
        ("sensitivity trend", criterion_6),
        ("baseline fidelity", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

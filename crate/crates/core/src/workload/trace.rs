//! Text trace format.
//!
//! One event per line, whitespace separated:
//!
//! ```text
//! seq pid ctx op [addr]
//! ```
//!
//! `op` is one of `R`, `W`, `F` (flush), `I` (instruction fetch), `PROBE`
//! (timed read) or `SCHED` (switch `ctx` to `pid`, no address). Addresses
//! are hexadecimal with an optional `0x` prefix. Blank lines and `#`
//! comments are ignored. `seq` must strictly increase, and every non-SCHED
//! event must follow a SCHED that put its pid on its ctx.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cache::{AccessKind, Addr};

pub type Pid = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Write,
    Flush,
    Fetch,
    Sched,
    Probe,
}

impl Op {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Op::Read => "R",
            Op::Write => "W",
            Op::Flush => "F",
            Op::Fetch => "I",
            Op::Sched => "SCHED",
            Op::Probe => "PROBE",
        }
    }

    /// Cache side and write flag for memory-accessing ops.
    pub fn access_kind(self) -> Option<(AccessKind, bool)> {
        match self {
            Op::Read | Op::Probe => Some((AccessKind::Data, false)),
            Op::Write => Some((AccessKind::Data, true)),
            Op::Fetch => Some((AccessKind::Instruction, false)),
            Op::Flush | Op::Sched => None,
        }
    }
}

impl FromStr for Op {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "R" => Op::Read,
            "W" => Op::Write,
            "F" => Op::Flush,
            "I" => Op::Fetch,
            "SCHED" => Op::Sched,
            "PROBE" => Op::Probe,
            _ => return Err(()),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AccessEvent {
    pub seq: u64,
    pub pid: Pid,
    pub ctx: usize,
    pub op: Op,
    /// `None` only for `SCHED`.
    pub addr: Option<Addr>,
}

impl AccessEvent {
    pub fn sched(seq: u64, pid: Pid, ctx: usize) -> Self {
        Self {
            seq,
            pid,
            ctx,
            op: Op::Sched,
            addr: None,
        }
    }

    pub fn mem(seq: u64, pid: Pid, ctx: usize, op: Op, addr: Addr) -> Self {
        debug_assert!(op != Op::Sched);
        Self {
            seq,
            pid,
            ctx,
            op,
            addr: Some(addr),
        }
    }
}

impl fmt::Display for AccessEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.seq, self.pid, self.ctx, self.op.mnemonic())?;
        if let Some(a) = self.addr {
            write!(f, " {a:#x}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceErrorKind {
    Malformed(String),
    NonMonotonicSeq { prev: u64, got: u64 },
    AccessBeforeSchedule { pid: Pid, ctx: usize },
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("line {line}, column {column}: {}", describe(.kind))]
pub struct TraceError {
    pub line: usize,
    pub column: usize,
    pub kind: TraceErrorKind,
}

fn describe(kind: &TraceErrorKind) -> String {
    match kind {
        TraceErrorKind::Malformed(m) => format!("malformed event: {m}"),
        TraceErrorKind::NonMonotonicSeq { prev, got } => {
            format!("sequence number {got} does not follow {prev}")
        }
        TraceErrorKind::AccessBeforeSchedule { pid, ctx } => {
            format!("access before schedule (pid {pid} is not scheduled on ctx {ctx})")
        }
    }
}

/// Tracks which pid each context runs, mirroring the simulator's rules: a
/// SCHED of a pid running elsewhere moves it, leaving the old context idle.
#[derive(Default, Debug, Clone)]
pub struct ScheduleTracker {
    running: Vec<Option<Pid>>,
}

impl ScheduleTracker {
    pub fn schedule(&mut self, pid: Pid, ctx: usize) {
        for slot in self.running.iter_mut() {
            if *slot == Some(pid) {
                *slot = None;
            }
        }
        if self.running.len() <= ctx {
            self.running.resize(ctx + 1, None);
        }
        self.running[ctx] = Some(pid);
    }

    pub fn is_running(&self, pid: Pid, ctx: usize) -> bool {
        self.running.get(ctx).copied().flatten() == Some(pid)
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<AccessEvent>, TraceError> {
    let mut events = Vec::new();
    let mut sched = ScheduleTracker::default();
    let mut prev_seq: Option<u64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let tokens: Vec<(usize, &str)> = tokenize(content);
        let err = |column: usize, kind| TraceError {
            line: line_no,
            column,
            kind,
        };
        let malformed = |column: usize, msg: String| err(column, TraceErrorKind::Malformed(msg));
        if tokens.len() < 4 {
            return Err(malformed(1, format!("expected `seq pid ctx op [addr]`, got {} fields", tokens.len())));
        }
        let (c, t) = tokens[0];
        let seq: u64 = t.parse().map_err(|_| malformed(c, format!("bad sequence number {t:?}")))?;
        let (c, t) = tokens[1];
        let pid: Pid = t.parse().map_err(|_| malformed(c, format!("bad pid {t:?}")))?;
        let (c, t) = tokens[2];
        let ctx: usize = t.parse().map_err(|_| malformed(c, format!("bad ctx {t:?}")))?;
        let (c, t) = tokens[3];
        let op: Op = t.parse().map_err(|_| malformed(c, format!("unknown op {t:?}")))?;
        let addr = match (op, tokens.get(4)) {
            (Op::Sched, None) => None,
            (Op::Sched, Some(&(c, _))) => return Err(malformed(c, "SCHED takes no address".into())),
            (_, None) => return Err(malformed(c, format!("{} requires an address", op.mnemonic()))),
            (_, Some(&(c, t))) => Some(parse_addr(t).ok_or_else(|| malformed(c, format!("bad address {t:?}")))?),
        };
        if let Some(&(c, _)) = tokens.get(5) {
            return Err(malformed(c, "trailing fields".into()));
        }
        if let Some(prev) = prev_seq {
            if seq <= prev {
                return Err(err(tokens[0].0, TraceErrorKind::NonMonotonicSeq { prev, got: seq }));
            }
        }
        prev_seq = Some(seq);
        if op == Op::Sched {
            sched.schedule(pid, ctx);
        } else if !sched.is_running(pid, ctx) {
            return Err(err(tokens[1].0, TraceErrorKind::AccessBeforeSchedule { pid, ctx }));
        }
        events.push(AccessEvent {
            seq,
            pid,
            ctx,
            op,
            addr,
        });
    }
    Ok(events)
}

fn tokenize(s: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(b)) => {
                out.push((b + 1, &s[b..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(b) = start {
        out.push((b + 1, &s[b..]));
    }
    out
}

fn parse_addr(t: &str) -> Option<Addr> {
    let digits = t
        .strip_prefix("0x")
        .or_else(|| t.strip_prefix("0X"))
        .unwrap_or(t);
    Addr::from_str_radix(digits, 16).ok()
}

pub fn write_trace(events: &[AccessEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 24);
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

//! Trace format and synthetic workloads.

pub mod gen;
pub mod trace;

pub use gen::{
    gen_background, gen_microbenchmark, gen_rsa_attack, AttackScenario, BackgroundParams, MicroParams,
    Placement, RsaVictimSpec, WorkloadError,
};
pub use trace::{parse_trace, write_trace, AccessEvent, Op, Pid, ScheduleTracker, TraceError, TraceErrorKind};

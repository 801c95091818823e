//! Deterministic trace-driven cache hierarchy simulator with the TimeCache
//! defense: per-context s-bits, load and preemption timestamps, first-access
//! misses and a bit-serial timestamp comparator.

pub mod bitserial;
pub mod cache;
pub mod config;
pub mod harness;
pub mod report;
pub mod stats;
pub mod timecache;
pub mod workload;

pub use crate::cache::{AccessKind, Addr, CacheGeometry, Hierarchy, LevelClass};
pub use crate::config::{ByteSize, ConfigError, LevelSpec, RunConfig, SchedulePolicy};
pub use crate::timecache::{RunSummary, SimError, Simulator};

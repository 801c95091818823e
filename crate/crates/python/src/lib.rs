//! Python bindings: configs, the simulator, generators and the paired
//! experiments. Reports come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use timecache::bitserial::TransposeArray;
use timecache::cache::AccessKind;
use timecache::config::RunConfig;
use timecache::harness::{self, ConfigPair};
use timecache::timecache::{Simulator, SwitchCostModel};
use timecache::workload::{self as wl, AccessEvent, MicroParams, RsaVictimSpec};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse(trace: &str) -> PyResult<Vec<AccessEvent>> {
    wl::parse_trace(trace).map_err(err)
}

/// Run configuration. Defaults to a split 32 KiB L1 and a shared 2 MiB LLC.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn with_defense(&self, defense: bool) -> Self {
        Self {
            inner: self.inner.with_defense(defense),
        }
    }

    fn with_llc_size(&self, size: u64) -> Self {
        Self {
            inner: self.inner.with_llc_size(size),
        }
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    #[getter]
    fn defense(&self) -> bool {
        self.inner.defense
    }

    #[setter]
    fn set_defense(&mut self, v: bool) {
        self.inner.defense = v;
    }

    #[getter]
    fn timestamp_bits(&self) -> u32 {
        self.inner.timestamp_bits
    }

    #[setter]
    fn set_timestamp_bits(&mut self, v: u32) {
        self.inner.timestamp_bits = v;
    }

    #[getter]
    fn switch_cost_charged(&self) -> bool {
        self.inner.switch_cost_charged
    }

    #[setter]
    fn set_switch_cost_charged(&mut self, v: bool) {
        self.inner.switch_cost_charged = v;
    }

    #[getter]
    fn constant_time_flush(&self) -> bool {
        self.inner.constant_time_flush
    }

    #[setter]
    fn set_constant_time_flush(&mut self, v: bool) {
        self.inner.constant_time_flush = v;
    }

    #[getter]
    fn num_contexts(&self) -> usize {
        self.inner.num_contexts()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(defense={}, timestamp_bits={}, contexts={}, levels={})",
            self.inner.defense,
            self.inner.timestamp_bits,
            self.inner.num_contexts(),
            self.inner.levels.len()
        )
    }
}

fn config_or_default(cfg: Option<PyConfig>) -> RunConfig {
    cfg.map(|c| c.inner).unwrap_or_default()
}

#[pyclass(name = "Simulator", unsendable)]
struct PySimulator {
    inner: Simulator,
}

#[pymethods]
impl PySimulator {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<PyConfig>) -> PyResult<Self> {
        Ok(Self {
            inner: Simulator::new(&config_or_default(config)).map_err(err)?,
        })
    }

    /// One access; returns latency and the per-level classification.
    #[pyo3(signature = (pid, ctx, addr, kind="data", write=false))]
    fn access<'py>(
        &mut self,
        py: Python<'py>,
        pid: u32,
        ctx: usize,
        addr: u64,
        kind: &str,
        write: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let kind = match kind {
            "data" => AccessKind::Data,
            "instruction" => AccessKind::Instruction,
            other => return Err(err(format!("unknown access kind {other:?}"))),
        };
        let out = self.inner.access(pid, ctx, addr, kind, write).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("latency", out.latency)?;
        d.set_item("writeback_cycles", out.writeback_cycles)?;
        let levels: Vec<(String, String)> = out
            .levels
            .iter()
            .map(|(id, c)| (self.inner.hierarchy().info(*id).label.clone(), c.to_string()))
            .collect();
        d.set_item("levels", levels)?;
        Ok(d)
    }

    fn flush(&mut self, ctx: usize, addr: u64) -> PyResult<u64> {
        self.inner.flush(ctx, addr).map_err(err)
    }

    fn context_switch(&mut self, ctx: usize, pid: u32) -> PyResult<u64> {
        self.inner.context_switch(ctx, pid).map_err(err)
    }

    /// Runs a trace in the text format; returns the number of events run.
    fn run_trace(&mut self, trace: &str) -> PyResult<usize> {
        let events = parse(trace)?;
        Ok(self.inner.run(&events).map_err(err)?.len())
    }

    #[getter]
    fn now(&self) -> u64 {
        self.inner.clock().now()
    }

    fn probes(&self) -> Vec<(u64, u32, u64, u64)> {
        self.inner
            .probes()
            .iter()
            .map(|p| (p.seq, p.pid, p.addr, p.latency))
            .collect()
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary())
    }
}

/// Shared-array microbenchmark. Returns (trace text, secret bits).
#[pyfunction]
#[pyo3(signature = (victim_touches=None, victim_ctx=0))]
fn gen_microbenchmark(victim_touches: Option<Vec<usize>>, victim_ctx: usize) -> PyResult<(String, Vec<bool>)> {
    let mut p = MicroParams::default();
    if let Some(t) = victim_touches {
        p.victim_touches = t;
    }
    p.placement.victim_ctx = victim_ctx;
    let s = wl::gen_microbenchmark(&p).map_err(err)?;
    Ok((wl::write_trace(&s.trace), s.secret))
}

/// Square-and-multiply victim under flush+reload. Returns (trace, key bits).
#[pyfunction]
#[pyo3(signature = (key_bits=64, seed=1, victim_ctx=0))]
fn gen_rsa_attack(key_bits: usize, seed: u64, victim_ctx: usize) -> PyResult<(String, Vec<bool>)> {
    let mut spec = RsaVictimSpec::new(RsaVictimSpec::random_key(key_bits, seed));
    spec.placement.victim_ctx = victim_ctx;
    let s = wl::gen_rsa_attack(&spec).map_err(err)?;
    Ok((wl::write_trace(&s.trace), s.secret))
}

#[pyfunction]
#[pyo3(signature = (accesses=100_000, nprocs=2, seed=1))]
fn gen_background(accesses: usize, nprocs: usize, seed: u64) -> PyResult<String> {
    let events = wl::gen_background(&wl::BackgroundParams {
        accesses,
        nprocs,
        seed,
        ..wl::BackgroundParams::default()
    })
    .map_err(err)?;
    Ok(wl::write_trace(&events))
}

/// Paired attack run ("micro" or "rsa"). Returns (baseline, defense) reports.
#[pyfunction]
#[pyo3(signature = (scenario, key_bits=64, seed=1, victim_ctx=0, config=None, threshold=None))]
fn run_attack<'py>(
    py: Python<'py>,
    scenario: &str,
    key_bits: usize,
    seed: u64,
    victim_ctx: usize,
    config: Option<PyConfig>,
    threshold: Option<u64>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let s = match scenario {
        "micro" => {
            let mut p = MicroParams::default();
            p.placement.victim_ctx = victim_ctx;
            wl::gen_microbenchmark(&p).map_err(err)?
        }
        "rsa" => {
            let mut spec = RsaVictimSpec::new(RsaVictimSpec::random_key(key_bits, seed));
            spec.placement.victim_ctx = victim_ctx;
            wl::gen_rsa_attack(&spec).map_err(err)?
        }
        other => return Err(err(format!("unknown scenario {other:?}"))),
    };
    let pair = ConfigPair::from_base(&config_or_default(config));
    let (b, d) = harness::run_attack(&s, &pair, threshold).map_err(err)?;
    Ok((to_py(py, &b)?, to_py(py, &d)?))
}

#[pyfunction]
#[pyo3(signature = (trace, config=None))]
fn run_overhead<'py>(py: Python<'py>, trace: &str, config: Option<PyConfig>) -> PyResult<Bound<'py, PyAny>> {
    let pair = ConfigPair::from_base(&config_or_default(config));
    let r = harness::run_overhead(&parse(trace)?, &pair).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (trace, llc_sizes, config=None))]
fn run_sensitivity<'py>(
    py: Python<'py>,
    trace: &str,
    llc_sizes: Vec<u64>,
    config: Option<PyConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let r = harness::run_sensitivity(&parse(trace)?, &config_or_default(config), &llc_sizes).map_err(err)?;
    to_py(py, &r)
}

/// One bit-serial compare-and-reset over fresh lines with the given load
/// timestamps. Returns (reset mask, iterations).
#[pyfunction]
#[pyo3(signature = (tcs, ts, bits=32))]
fn compare_and_reset(tcs: Vec<u32>, ts: u32, bits: u32) -> PyResult<(Vec<bool>, u32)> {
    if !(1..=32).contains(&bits) {
        return Err(err("bits must be between 1 and 32"));
    }
    let mut a = TransposeArray::new(tcs.len(), bits, 1);
    for (col, &tc) in tcs.iter().enumerate() {
        a.fill_column(col, tc, 0).map_err(err)?;
    }
    let out = a.compare_and_reset(ts, 0).map_err(err)?;
    Ok((out.reset_mask.to_bools(), out.iterations))
}

#[pyfunction]
fn sbit_copy_accesses(num_lines: usize) -> u64 {
    SwitchCostModel::sbit_copy_accesses(num_lines)
}

#[pymodule]
#[pyo3(name = "timecache")]
fn timecache_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(gen_microbenchmark, m)?)?;
    m.add_function(wrap_pyfunction!(gen_rsa_attack, m)?)?;
    m.add_function(wrap_pyfunction!(gen_background, m)?)?;
    m.add_function(wrap_pyfunction!(run_attack, m)?)?;
    m.add_function(wrap_pyfunction!(run_overhead, m)?)?;
    m.add_function(wrap_pyfunction!(run_sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(compare_and_reset, m)?)?;
    m.add_function(wrap_pyfunction!(sbit_copy_accesses, m)?)?;
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use timecache::bitserial::TransposeArray;
use timecache::config::{ByteSize, ConfigError, RunConfig};
use timecache::harness::{self, ConfigPair, HarnessError, LeakageReport};
use timecache::report;
use timecache::timecache::{SimError, Simulator};
use timecache::workload::{
    gen_background, gen_microbenchmark, gen_rsa_attack, parse_trace, write_trace, AccessEvent, AttackScenario,
    BackgroundParams, MicroParams, RsaVictimSpec, TraceError, WorkloadError,
};

/// Trace-driven cache simulator with the TimeCache defense.
#[derive(Parser)]
#[command(name = "timecache", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation of a trace and write per-level statistics.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run an attack scenario on baseline and defense; exits 1 if the
    /// defense leaks or the baseline attack does not fully succeed.
    Attack {
        #[arg(value_enum)]
        scenario: Scenario,
        #[command(flatten)]
        attack: AttackOpts,
        /// Only check the defense side (exit 1 on any probe hit).
        #[arg(long)]
        defense_only: bool,
        #[command(flatten)]
        common: Common,
    },
    /// LLC size sensitivity sweep over paired runs.
    Sweep {
        /// Trace to sweep; a background workload is generated if omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Comma-separated LLC sizes, e.g. 2M,4M,8M.
        #[arg(long, value_delimiter = ',', default_value = "2M,4M,8M")]
        sizes: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write an SVG bar chart here.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a generated trace.
    Gen {
        #[arg(value_enum)]
        kind: GenKind,
        #[command(flatten)]
        attack: AttackOpts,
        #[arg(long, default_value_t = 100_000)]
        accesses: usize,
        #[arg(long, default_value_t = 2)]
        nprocs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired baseline/defense run of a trace with overhead and MPKI.
    Compare {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one bit-serial compare-and-reset and print the array state.
    InspectArray {
        /// Comma-separated load timestamps, one per line.
        #[arg(long, value_delimiter = ',', required = true)]
        tc: Vec<u32>,
        #[arg(long)]
        ts: u32,
        #[arg(long, default_value_t = 8)]
        bits: u32,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Emit JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackOpts {
    #[arg(long, default_value_t = 64)]
    key_bits: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    threshold: Option<u64>,
    /// Run the victim on hardware context 1 instead of time-sharing ctx 0.
    #[arg(long)]
    victim_ctx: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Micro,
    Rsa,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Micro,
    Rsa,
    Background,
}

enum Failure {
    /// Experiment contract or trace content failure.
    Contract(String),
    /// I/O, config or usage failure.
    Setup(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Contract(_) => 1,
            Failure::Setup(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Contract(m) | Failure::Setup(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Setup(format!("config error: {e}"))
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Geometry(_) => Failure::Setup(format!("config error: {e}")),
            _ => Failure::Contract(format!("simulation error: {e}")),
        }
    }
}

impl From<WorkloadError> for Failure {
    fn from(e: WorkloadError) -> Self {
        Failure::Setup(format!("workload error: {e}"))
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Sim(s) => s.into(),
            HarnessError::NoProbes | HarnessError::UnknownProbe { .. } | HarnessError::SecretLength { .. } => {
                Failure::Contract(e.to_string())
            }
            _ => Failure::Setup(format!("config error: {e}")),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Setup(format!("cannot open {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::from_toml(&read(p)?)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_trace(path: &Path) -> Result<Vec<AccessEvent>, Failure> {
    let text = read(path)?;
    parse_trace(&text).map_err(|e: TraceError| Failure::Contract(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Setup(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn attack_scenario(kind: Scenario, o: &AttackOpts) -> Result<AttackScenario, Failure> {
    let scenario = match kind {
        Scenario::Micro => {
            let mut p = MicroParams::default();
            if let Some(c) = o.victim_ctx {
                p.placement.victim_ctx = c;
            }
            gen_microbenchmark(&p)?
        }
        Scenario::Rsa => {
            if o.key_bits == 0 {
                return Err(Failure::Setup("--key-bits must be positive".into()));
            }
            let mut spec = RsaVictimSpec::new(RsaVictimSpec::random_key(o.key_bits, o.seed));
            if let Some(c) = o.victim_ctx {
                spec.placement.victim_ctx = c;
            }
            gen_rsa_attack(&spec)?
        }
    };
    Ok(scenario)
}

fn verdict_line(r: &LeakageReport) -> String {
    format!(
        "{}: probes={} hits_observed={} accuracy={:.4} threshold={}",
        if r.defense { "timecache" } else { "baseline" },
        r.probes.len(),
        r.hits_observed,
        r.accuracy,
        r.hit_threshold_cycles
    )
}

fn parse_sizes(sizes: &[String]) -> Result<Vec<u64>, Failure> {
    if sizes.len() < 2 {
        return Err(Failure::Setup("usage error: --sizes needs at least two sizes".into()));
    }
    sizes
        .iter()
        .map(|s| {
            s.parse::<ByteSize>()
                .map(|b| b.0)
                .map_err(|e| Failure::Setup(format!("config error: size {s:?}: {e}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Simulate { trace, common } => {
            let cfg = load_config(common.config.as_deref())?;
            let events = load_trace(&trace)?;
            let mut sim = Simulator::new(&cfg)?;
            sim.run(&events)?;
            let s = sim.summary();
            let text = if common.json {
                report::to_json("stats", &s)
            } else {
                report::summary_csv(&s)
            };
            emit(common.out.as_deref(), &text)
        }
        Cmd::Attack {
            scenario,
            attack,
            defense_only,
            common,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let s = attack_scenario(scenario, &attack)?;
            let (b, d) = harness::run_attack(&s, &ConfigPair::from_base(&cfg), attack.threshold.or(cfg.hit_threshold))?;
            let text = if common.json {
                report::to_json("leakage", &[&b, &d])
            } else {
                report::leakage_csv(&[&b, &d])
            };
            emit(common.out.as_deref(), &text)?;
            if !defense_only {
                eprintln!("{}", verdict_line(&b));
            }
            eprintln!("{}", verdict_line(&d));
            harness::attack_verdict(&b, &d, defense_only).map_err(Failure::Contract)
        }
        Cmd::Sweep {
            trace,
            sizes,
            seed,
            svg,
            common,
        } => {
            let sizes = parse_sizes(&sizes)?;
            let cfg = load_config(common.config.as_deref())?;
            let events = match trace {
                Some(p) => load_trace(&p)?,
                None => gen_background(&BackgroundParams::sweep_default(seed))?,
            };
            let r = harness::run_sensitivity(&events, &cfg, &sizes)?;
            let text = if common.json {
                report::to_json("sweep", &r)
            } else {
                report::sweep_csv(&r)
            };
            emit(common.out.as_deref(), &text)?;
            if let Some(p) = svg {
                emit(Some(&p), &report::sweep_svg(&r))?;
            }
            Ok(())
        }
        Cmd::Gen {
            kind,
            attack,
            accesses,
            nprocs,
            out,
        } => {
            let events = match kind {
                GenKind::Micro => attack_scenario(Scenario::Micro, &attack)?.trace,
                GenKind::Rsa => attack_scenario(Scenario::Rsa, &attack)?.trace,
                GenKind::Background => gen_background(&BackgroundParams {
                    accesses,
                    nprocs,
                    seed: attack.seed,
                    ..BackgroundParams::default()
                })?,
            };
            emit(out.as_deref(), &write_trace(&events))
        }
        Cmd::Compare { trace, common } => {
            let cfg = load_config(common.config.as_deref())?;
            let events = load_trace(&trace)?;
            let r = harness::run_overhead(&events, &ConfigPair::from_base(&cfg))?;
            let text = if common.json {
                report::to_json("overhead", &r)
            } else {
                report::overhead_csv(&r)
            };
            emit(common.out.as_deref(), &text)?;
            let name = trace.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
            eprintln!("{}", report::table_row(&name, &r));
            Ok(())
        }
        Cmd::InspectArray { tc, ts, bits } => {
            if !(1..=32).contains(&bits) {
                return Err(Failure::Setup("usage error: --bits must be between 1 and 32".into()));
            }
            let mut a = TransposeArray::new(tc.len(), bits, 1);
            for (col, &t) in tc.iter().enumerate() {
                a.fill_column(col, t, 0)
                    .map_err(|e| Failure::Setup(format!("usage error: {e}")))?;
            }
            let mut text = format!("before (ts={ts}):\n{}", a.dump_rows(tc.len()));
            let outcome = a
                .compare_and_reset(ts, 0)
                .map_err(|e| Failure::Setup(format!("usage error: {e}")))?;
            let _ = std::fmt::Write::write_fmt(
                &mut text,
                format_args!(
                    "after {} iterations, reset mask {}:\n{}",
                    outcome.iterations,
                    outcome.reset_mask,
                    a.dump_rows(tc.len())
                ),
            );
            emit(None, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("timecache: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

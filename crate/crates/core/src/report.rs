//! CSV, JSON and SVG renderings of run, attack, overhead and sweep reports.
//!
//! Every CSV starts with a `#schema=<name>.v<N>` line and every JSON document
//! carries `schema_version` and `kind`, so downstream tools can reject
//! layouts they do not understand.

use std::fmt::Write as _;

use serde::Serialize;

use crate::harness::{LeakageReport, OverheadReport, SweepResult};
use crate::timecache::RunSummary;

pub const SCHEMA_VERSION: u32 = 1;

fn csv_table<R: Serialize>(schema: &str, preamble: &[String], rows: impl IntoIterator<Item = R>) -> String {
    let mut out = format!("#schema=timecache.{schema}.v{SCHEMA_VERSION}\n");
    for line in preamble {
        let _ = writeln!(out, "#{line}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv"));
    out
}

#[derive(Serialize)]
struct LevelRow<'a> {
    label: &'a str,
    level: usize,
    accesses: u64,
    hits: u64,
    misses: u64,
    first_access_misses: u64,
    bypasses: u64,
    fills: u64,
    evictions: u64,
    dirty_evictions: u64,
    mpki: f64,
    first_access_mpki: f64,
}

pub fn summary_csv(s: &RunSummary) -> String {
    let preamble = [format!(
        "defense={},events={},instructions={},cycles={},context_switches={},switch_cycles={},flushes={},probes={},memory_writebacks={}",
        s.defense, s.events, s.instructions, s.cycles, s.context_switches, s.switch_cycles, s.flushes, s.probes, s.memory_writebacks
    )];
    csv_table(
        "stats",
        &preamble,
        s.levels.iter().map(|l| LevelRow {
            label: &l.label,
            level: l.level,
            accesses: l.counts.accesses,
            hits: l.counts.hits,
            misses: l.counts.misses,
            first_access_misses: l.counts.first_access_misses,
            bypasses: l.counts.bypasses,
            fills: l.fills,
            evictions: l.evictions,
            dirty_evictions: l.dirty_evictions,
            mpki: l.mpki,
            first_access_mpki: l.first_access_mpki,
        }),
    )
}

#[derive(Serialize)]
struct ProbeRow {
    config: &'static str,
    seq: u64,
    addr: String,
    latency: u64,
    hit: bool,
}

pub fn leakage_csv(reports: &[&LeakageReport]) -> String {
    let preamble: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "config={},threshold={},hits_observed={},accuracy={}",
                config_name(r.defense),
                r.hit_threshold_cycles,
                r.hits_observed,
                r.accuracy
            )
        })
        .collect();
    let rows = reports.iter().flat_map(|r| {
        r.probes.iter().map(move |p| ProbeRow {
            config: config_name(r.defense),
            seq: p.seq,
            addr: format!("{:#x}", p.addr),
            latency: p.latency,
            hit: p.hit,
        })
    });
    csv_table("leakage", &preamble, rows)
}

fn config_name(defense: bool) -> &'static str {
    if defense {
        "timecache"
    } else {
        "baseline"
    }
}

pub fn overhead_csv(r: &OverheadReport) -> String {
    let preamble = [format!(
        "instructions={},cycles_baseline={},cycles_defense={},overhead_ratio={},switch_cycles={},identity_holds={}",
        r.instructions, r.cycles_baseline, r.cycles_defense, r.overhead_ratio, r.switch_cycles, r.identity_holds
    )];
    csv_table("overhead", &preamble, &r.levels)
}

pub fn sweep_csv(r: &SweepResult) -> String {
    csv_table("sweep", &[format!("level={}", r.llc_label)], &r.points)
}

/// Wraps a report in a versioned envelope.
pub fn to_json<T: Serialize>(kind: &str, report: &T) -> String {
    let doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "report": report,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

/// One row in the style of a benchmark overhead table:
/// name, overhead percent, outermost-level MPKI baseline and defense.
pub fn table_row(name: &str, r: &OverheadReport) -> String {
    let (mb, md) = r.levels.last().map_or((0.0, 0.0), |l| (l.mpki_baseline, l.mpki_defense));
    format!(
        "{name} | {:.2}% | {:.3} | {:.3}",
        (r.overhead_ratio - 1.0) * 100.0,
        mb,
        md
    )
}

fn human_size(bytes: u64) -> String {
    crate::config::ByteSize(bytes).to_string()
}

/// Grouped bar chart: first-access share of misses and overhead percent per
/// LLC size.
pub fn sweep_svg(r: &SweepResult) -> String {
    const W: f64 = 120.0;
    const H: f64 = 200.0;
    const TOP: f64 = 30.0;
    let n = r.points.len().max(1) as f64;
    let width = 60.0 + n * W;
    let max_overhead = r
        .points
        .iter()
        .map(|p| (p.overhead_ratio - 1.0).max(0.0))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
        H + TOP + 50.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="10" y="18">{} first-access share of misses (blue) and relative overhead (orange)</text>"#,
        r.llc_label
    );
    let base = TOP + H;
    for (i, p) in r.points.iter().enumerate() {
        let x = 40.0 + i as f64 * W;
        let share_h = p.first_access_to_total_miss.clamp(0.0, 1.0) * H;
        let over_h = ((p.overhead_ratio - 1.0).max(0.0) / max_overhead) * H;
        let _ = writeln!(
            svg,
            r##"<rect x="{x}" y="{:.2}" width="40" height="{share_h:.2}" fill="#4878a8"/>"##,
            base - share_h
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{}" y="{:.2}" width="40" height="{over_h:.2}" fill="#e08a3c"/>"##,
            x + 44.0,
            base - over_h
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}">{} ({:.1}%, +{:.2}%)</text>"#,
            base + 16.0,
            human_size(p.llc_size),
            p.first_access_to_total_miss * 100.0,
            (p.overhead_ratio - 1.0) * 100.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="30" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        width - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SweepPoint;

    fn sweep() -> SweepResult {
        SweepResult {
            llc_label: "LLC".into(),
            points: [2u64, 4, 8]
                .iter()
                .enumerate()
                .map(|(i, &m)| SweepPoint {
                    llc_size: m << 20,
                    overhead_ratio: 1.0 + 0.01 / (i + 1) as f64,
                    first_access_misses: 10,
                    total_misses: 100 * (i as u64 + 1),
                    first_access_to_total_miss: 0.1 / (i + 1) as f64,
                    evictions: 5,
                    identity_holds: true,
                })
                .collect(),
        }
    }

    #[test]
    fn csv_starts_with_schema() {
        let s = sweep_csv(&sweep());
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("#schema=timecache.sweep.v1"));
        assert_eq!(lines.next(), Some("#level=LLC"));
        assert!(lines.next().unwrap().starts_with("llc_size,overhead_ratio,"));
        assert_eq!(s.lines().count(), 6);
    }

    #[test]
    fn json_envelope() {
        let v: serde_json::Value = serde_json::from_str(&to_json("sweep", &sweep())).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["kind"], "sweep");
        assert_eq!(v["report"]["points"][2]["llc_size"], 8u64 << 20);
    }

    #[test]
    fn svg_has_two_bars_per_size() {
        let svg = sweep_svg(&sweep());
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("8M"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(sweep_svg(&sweep()), sweep_svg(&sweep()));
        assert_eq!(sweep_csv(&sweep()), sweep_csv(&sweep()));
    }
}

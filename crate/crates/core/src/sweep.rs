//! Replicated runs over protocol, node-count and fragment-size axes, and
//! the CSV / plot-data files they produce.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::channel::write_trace;
use crate::config::{Protocol, ScenarioConfig};
use crate::edca::PriorityClass;
use crate::metrics::{aggregate_ci, Aggregate, RunSummary};
use crate::rng::derive_seed;
use crate::sim::Simulation;
use crate::traffic::TrafficMix;

pub const CSV_HEADER: &str = "protocol,nodes,frag_size,class,mean_delay_us,delay_ci_us,throughput_bps,throughput_ci_bps,delivered,dropped,collisions";

const CONFIDENCE: f64 = 0.95;

/// One point of the sweep grid. `frag_size` is `None` for EDCA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub protocol: Protocol,
    pub nodes: u16,
    pub frag_size: Option<usize>,
}

impl Cell {
    pub fn label(&self) -> String {
        match self.frag_size {
            Some(f) => format!("{} nodes={} F={}", self.protocol, self.nodes, f),
            None => format!("{} nodes={}", self.protocol, self.nodes),
        }
    }

    /// The template with this cell's axes applied.
    pub fn config(&self, template: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = template.clone();
        cfg.protocol = self.protocol;
        cfg.node_count = self.nodes;
        if let Some(f) = self.frag_size {
            cfg.fragment_payload_size = f;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepAxes {
    pub protocols: Vec<Protocol>,
    pub nodes: Vec<u16>,
    /// Applies to FROG cells only.
    pub frag_sizes: Vec<usize>,
}

impl SweepAxes {
    /// Both protocols, 2 to 11 vehicles, fragment sizes 2 and 16.
    pub fn reproduction() -> Self {
        SweepAxes {
            protocols: vec![Protocol::Edca, Protocol::Frog],
            nodes: (2..=11).collect(),
            frag_sizes: vec![2, 16],
        }
    }

    /// The single cell a configuration describes.
    pub fn single(cfg: &ScenarioConfig) -> Self {
        SweepAxes {
            protocols: vec![cfg.protocol],
            nodes: vec![cfg.node_count],
            frag_sizes: vec![cfg.fragment_payload_size],
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &nodes in &self.nodes {
                match protocol {
                    Protocol::Edca => out.push(Cell {
                        protocol,
                        nodes,
                        frag_size: None,
                    }),
                    Protocol::Frog => out.extend(self.frag_sizes.iter().map(|&f| Cell {
                        protocol,
                        nodes,
                        frag_size: Some(f),
                    })),
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Seed of replication `run`. Protocol and fragment size are left out so
/// that every protocol variant sees the same traffic.
pub fn replication_seed(master: u64, nodes: u16, mix: TrafficMix, run: usize) -> u64 {
    derive_seed(&[master, nodes as u64, mix as u64, run as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub protocol: Protocol,
    pub nodes: u16,
    pub frag_size: Option<usize>,
    pub class: PriorityClass,
    pub mean_delay_us: Option<f64>,
    pub delay_ci_us: Option<f64>,
    pub throughput_bps: f64,
    pub throughput_ci_bps: Option<f64>,
    /// Totals over all replications.
    pub delivered: u64,
    pub dropped: u64,
    pub collisions: u64,
}

impl ResultRow {
    fn key(&self) -> (Protocol, u16, Option<usize>, PriorityClass) {
        (self.protocol, self.nodes, self.frag_size, self.class)
    }

    pub fn delay(&self) -> Option<Aggregate> {
        Some(Aggregate {
            mean: self.mean_delay_us?,
            half_width: self.delay_ci_us?,
            n: 0,
        })
    }

    pub fn throughput(&self) -> Option<Aggregate> {
        Some(Aggregate {
            mean: self.throughput_bps,
            half_width: self.throughput_ci_bps?,
            n: 0,
        })
    }
}

/// Per-run accounting written next to the results.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConservationRow {
    pub cell: Cell,
    pub run: usize,
    pub seed: u64,
    pub class: PriorityClass,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued: u64,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub runs: Vec<RunSummary>,
    pub rows: Vec<ResultRow>,
    pub conservation: Vec<ConservationRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellFailure {
    pub cell: Cell,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<ResultRow>,
    pub conservation: Vec<ConservationRow>,
    pub failures: Vec<CellFailure>,
}

/// Collapse per-run summaries into one row per class.
pub fn aggregate_rows(cell: Cell, runs: &[RunSummary]) -> Vec<ResultRow> {
    PriorityClass::ALL
        .iter()
        .map(|&class| {
            let per: Vec<_> = runs.iter().map(|r| r.class(class)).collect();
            let delays: Vec<f64> = per.iter().filter_map(|s| s.mean_delay_us).collect();
            let tputs: Vec<f64> = per.iter().map(|s| s.throughput_bps).collect();
            let (mean_delay_us, delay_ci_us) = mean_and_ci(&delays);
            let (throughput, throughput_ci_bps) = mean_and_ci(&tputs);
            ResultRow {
                protocol: cell.protocol,
                nodes: cell.nodes,
                frag_size: cell.frag_size,
                class,
                mean_delay_us,
                delay_ci_us,
                throughput_bps: throughput.unwrap_or(0.0),
                throughput_ci_bps,
                delivered: per.iter().map(|s| s.delivered).sum(),
                dropped: per.iter().map(|s| s.dropped()).sum(),
                collisions: per.iter().map(|s| s.collisions).sum(),
            }
        })
        .collect()
}

fn mean_and_ci(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), None),
        _ => {
            let a = aggregate_ci(values, CONFIDENCE).expect("two or more values");
            (Some(a.mean), Some(a.half_width))
        }
    }
}

/// Run every replication of one cell. Any failing replication fails the cell.
pub fn run_cell(
    template: &ScenarioConfig,
    cell: Cell,
    trace_dir: Option<&Path>,
) -> Result<CellOutcome, CellFailure> {
    let cfg = cell.config(template);
    let fail = |message: String| CellFailure { cell, message };
    let results: Vec<Result<(u64, RunSummary), String>> = (0..cfg.run_count)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(cfg.seed, cell.nodes, cfg.traffic_mix, r);
            let attempt = panic::catch_unwind(AssertUnwindSafe(|| -> Result<_, String> {
                let mut sim = Simulation::new(&cfg, seed).map_err(|e| e.to_string())?;
                if trace_dir.is_some() {
                    sim.enable_trace();
                }
                let out = sim.run().map_err(|e| e.to_string())?;
                if let (Some(dir), Some(trace)) = (trace_dir, out.trace.as_ref()) {
                    let name = trace_file_name(cell, r);
                    let file = fs::File::create(dir.join(&name))
                        .map_err(|e| format!("writing {name}: {e}"))?;
                    write_trace(trace, io::BufWriter::new(file))
                        .map_err(|e| format!("writing {name}: {e}"))?;
                }
                Ok((seed, out.summary))
            }));
            match attempt {
                Ok(r) => r,
                Err(p) => Err(panic_message(p)),
            }
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut conservation = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        let (seed, summary) = res.map_err(|m| fail(format!("replication {r}: {m}")))?;
        for class in PriorityClass::ALL {
            let s = summary.class(class);
            conservation.push(ConservationRow {
                cell,
                run: r,
                seed,
                class,
                generated: s.generated,
                delivered: s.delivered,
                dropped: s.dropped(),
                queued: s.queued,
            });
        }
        runs.push(summary);
    }
    Ok(CellOutcome {
        cell,
        rows: aggregate_rows(cell, &runs),
        runs,
        conservation,
    })
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

pub fn trace_file_name(cell: Cell, run: usize) -> String {
    match cell.frag_size {
        Some(f) => format!("trace_{}_n{}_f{}_r{}.tsv", cell.protocol, cell.nodes, f, run),
        None => format!("trace_{}_n{}_r{}.tsv", cell.protocol, cell.nodes, run),
    }
}

/// Run all cells in parallel. Failed cells are reported, the rest proceed.
pub fn run_sweep(template: &ScenarioConfig, axes: &SweepAxes, trace_dir: Option<&Path>) -> SweepReport {
    let outcomes: Vec<_> = axes
        .cells()
        .into_par_iter()
        .map(|cell| run_cell(template, cell, trace_dir))
        .collect();
    let mut report = SweepReport::default();
    for o in outcomes {
        match o {
            Ok(c) => {
                report.rows.extend(c.rows);
                report.conservation.extend(c.conservation);
            }
            Err(f) => report.failures.push(f),
        }
    }
    report.rows.sort_by_key(|r| r.key());
    report
        .conservation
        .sort_by_key(|c| (c.cell, c.run, c.class));
    report.failures.sort_by_key(|f| f.cell);
    report
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"))
}

/// Results as CSV text, header included.
pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3},{},{},{},{}",
            r.protocol,
            r.nodes,
            r.frag_size.map(|f| f.to_string()).unwrap_or_default(),
            r.class,
            opt(r.mean_delay_us),
            opt(r.delay_ci_us),
            r.throughput_bps,
            opt(r.throughput_ci_bps),
            r.delivered,
            r.dropped,
            r.collisions
        );
    }
    out
}

pub fn render_conservation(rows: &[ConservationRow]) -> String {
    let mut out =
        String::from("protocol,nodes,frag_size,class,run,seed,generated,delivered,dropped,queued\n");
    for c in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.cell.protocol,
            c.cell.nodes,
            c.cell.frag_size.map(|f| f.to_string()).unwrap_or_default(),
            c.class,
            c.run,
            c.seed,
            c.generated,
            c.delivered,
            c.dropped,
            c.queued
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Delay,
    Throughput,
}

impl Metric {
    fn prefix(self) -> &'static str {
        match self {
            Metric::Delay => "delay",
            Metric::Throughput => "throughput",
        }
    }
}

/// One plot-data file per metric and fragment size. Each holds one series
/// per protocol and class (EDCA series repeat in every file as the
/// baseline), blocks separated by two blank lines, `x y ci` per line.
pub fn render_plot_files(rows: &[ResultRow]) -> Vec<(String, String)> {
    let mut sizes: Vec<usize> = rows.iter().filter_map(|r| r.frag_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        sizes.push(0);
    }
    let mut files = Vec::new();
    for metric in [Metric::Delay, Metric::Throughput] {
        for &f in &sizes {
            let name = if f == 0 {
                format!("{}.dat", metric.prefix())
            } else {
                format!("{}_f{}.dat", metric.prefix(), f)
            };
            let mut text = String::new();
            let mut series: Vec<(Protocol, PriorityClass)> = rows
                .iter()
                .filter(|r| r.frag_size.is_none() || r.frag_size == Some(f))
                .map(|r| (r.protocol, r.class))
                .collect();
            series.sort();
            series.dedup();
            for (i, &(p, c)) in series.iter().enumerate() {
                if i > 0 {
                    text.push_str("\n\n");
                }
                let _ = writeln!(text, "# {p} {c}");
                for r in rows.iter().filter(|r| {
                    r.protocol == p && r.class == c && (r.frag_size.is_none() || r.frag_size == Some(f))
                }) {
                    let (y, ci) = match metric {
                        Metric::Delay => (r.mean_delay_us, r.delay_ci_us),
                        Metric::Throughput => (Some(r.throughput_bps), r.throughput_ci_bps),
                    };
                    let _ = writeln!(text, "{} {} {}", r.nodes, opt(y), opt(ci));
                }
            }
            files.push((name, text));
        }
    }
    files
}

/// Write `results.csv`, the plot-data files and `conservation.csv` into
/// `dir`. Returns the paths written.
pub fn emit(report: &SweepReport, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put("results.csv", &render_csv(&report.rows))?;
    if !report.rows.is_empty() {
        for (name, text) in render_plot_files(&report.rows) {
            put(&name, &text)?;
        }
    }
    put("conservation.csv", &render_conservation(&report.conservation))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ClassSummary;
    use crate::time::SimTime;

    #[test]
    fn reproduction_grid() {
        let cells = SweepAxes::reproduction().cells();
        assert_eq!(cells.len(), 30);
        assert_eq!(cells.iter().filter(|c| c.protocol == Protocol::Edca).count(), 10);
    }

    #[test]
    fn seeds_pair_protocols() {
        let a = replication_seed(7, 11, TrafficMix::Both, 0);
        assert_eq!(a, replication_seed(7, 11, TrafficMix::Both, 0));
        assert_ne!(a, replication_seed(7, 11, TrafficMix::Both, 1));
        assert_ne!(a, replication_seed(7, 10, TrafficMix::Both, 0));
        assert_ne!(a, replication_seed(8, 11, TrafficMix::Both, 0));
    }

    fn summary(urgent_delay: Option<f64>, tput: f64) -> RunSummary {
        let class = |d: Option<f64>| ClassSummary {
            mean_delay_us: d,
            throughput_bps: tput,
            generated: 3,
            delivered: d.map_or(0, |_| 2),
            dropped_retry: 1,
            collisions: 4,
            ..ClassSummary::default()
        };
        RunSummary {
            duration: SimTime::from_secs(1),
            urgent: class(urgent_delay),
            normal: class(Some(10.0)),
            channel_collisions: 0,
            busy_time: SimTime::ZERO,
            suspensions: 0,
        }
    }

    #[test]
    fn undefined_delay_is_na() {
        let cell = Cell {
            protocol: Protocol::Edca,
            nodes: 2,
            frag_size: None,
        };
        let rows = aggregate_rows(cell, &[summary(None, 0.0), summary(None, 0.0)]);
        let csv = render_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "edca,2,,urgent,NA,NA,0.000,0.000,0,2,8");
        assert_eq!(lines[2], "edca,2,,normal,10.000,0.000,0.000,0.000,4,2,8");
    }

    #[test]
    fn single_row_csv() {
        let cell = Cell {
            protocol: Protocol::Frog,
            nodes: 3,
            frag_size: Some(16),
        };
        let rows = aggregate_rows(cell, &[summary(Some(5.0), 968.0)]);
        let csv = render_csv(&rows[..1]);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap(), "frog,3,16,urgent,5.000,NA,968.000,NA,2,1,4");
    }

    #[test]
    fn five_run_ci() {
        let cell = Cell {
            protocol: Protocol::Edca,
            nodes: 2,
            frag_size: None,
        };
        let runs: Vec<_> = (1..=5).map(|i| summary(Some(i as f64), i as f64)).collect();
        let rows = aggregate_rows(cell, &runs);
        assert_eq!(rows[0].mean_delay_us, Some(3.0));
        assert!((rows[0].delay_ci_us.unwrap() - 1.963).abs() < 1e-3);
        assert!((rows[0].throughput_ci_bps.unwrap() - 1.963).abs() < 1e-3);
    }

    #[test]
    fn plot_files_for_full_grid() {
        let mut rows = Vec::new();
        for cell in SweepAxes::reproduction().cells() {
            rows.extend(aggregate_rows(cell, &[summary(Some(1.0), 1.0), summary(Some(2.0), 2.0)]));
        }
        assert_eq!(rows.len(), 60);
        let files = render_plot_files(&rows);
        let names: Vec<_> = files.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            vec!["delay_f2.dat", "delay_f16.dat", "throughput_f2.dat", "throughput_f16.dat"]
        );
        let (_, text) = &files[0];
        assert_eq!(text.matches("# ").count(), 4);
        assert_eq!(text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count(), 40);
        for line in text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')) {
            assert_eq!(line.split_whitespace().count(), 3);
        }
    }

    #[test]
    fn failed_cell_does_not_stop_the_others() {
        let template = ScenarioConfig {
            duration: SimTime::from_secs(1),
            run_count: 2,
            ..ScenarioConfig::default()
        };
        let axes = SweepAxes {
            protocols: vec![Protocol::Edca, Protocol::Frog],
            nodes: vec![2],
            frag_sizes: vec![1, 16],
        };
        let report = run_sweep(&template, &axes, None);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].cell.frag_size, Some(1));
        assert!(report.failures[0].message.starts_with("replication 0"));
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.conservation.len(), 8);
    }
}

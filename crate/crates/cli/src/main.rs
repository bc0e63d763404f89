use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::Parser;
use vanet_mac::config::{parse_config, ScenarioConfig};
use vanet_mac::sweep::{emit, run_sweep, SweepAxes};

/// Run EDCA / FROG-MAC vehicular network simulations and write results.
#[derive(Debug, Parser)]
#[command(name = "vanet-sim", version)]
struct Args {
    /// Scenario file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// edca or frog.
    #[arg(long, value_name = "P")]
    protocol: Option<String>,
    /// Number of vehicles (the sink is extra).
    #[arg(long, value_name = "N")]
    nodes: Option<String>,
    /// Fragment payload size in bytes (frog only).
    #[arg(long, value_name = "F")]
    frag_size: Option<String>,
    #[arg(long, value_name = "S")]
    seed: Option<String>,
    /// Replications per cell.
    #[arg(long, value_name = "R")]
    runs: Option<String>,
    /// Simulated time per run, in microseconds.
    #[arg(long, value_name = "US")]
    duration_us: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    /// Also dump per-run channel traces into DIR.
    #[arg(long, value_name = "DIR")]
    trace: Option<PathBuf>,
    /// Run the reproduction grid (both protocols, 2-11 vehicles, F in {2, 16});
    /// --protocol, --nodes and --frag-size narrow it to one value each.
    #[arg(long)]
    sweep: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn load(args: &Args) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
        }
        None => ScenarioConfig::default(),
    };
    let overrides = [
        ("--protocol", "protocol", &args.protocol),
        ("--nodes", "node_count", &args.nodes),
        ("--frag-size", "fragment_payload_size", &args.frag_size),
        ("--seed", "seed", &args.seed),
        ("--runs", "run_count", &args.runs),
        ("--duration-us", "duration_us", &args.duration_us),
    ];
    for (flag, key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| anyhow!("{flag}: {e}"))?;
        }
    }
    cfg.check_consistency()
        .map_err(|(key, e)| anyhow!("{key}: {e}"))?;
    Ok(cfg)
}

fn axes(args: &Args, cfg: &ScenarioConfig) -> SweepAxes {
    if !args.sweep {
        return SweepAxes::single(cfg);
    }
    let mut axes = SweepAxes::reproduction();
    if args.protocol.is_some() {
        axes.protocols = vec![cfg.protocol];
    }
    if args.nodes.is_some() {
        axes.nodes = vec![cfg.node_count];
    }
    if args.frag_size.is_some() {
        axes.frag_sizes = vec![cfg.fragment_payload_size];
    }
    axes
}

fn run(args: &Args) -> Result<bool> {
    let cfg = load(args)?;
    if args.print_config {
        print!("{}", cfg.render());
        return Ok(true);
    }
    if let Some(dir) = &args.trace {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let report = run_sweep(&cfg, &axes(args, &cfg), args.trace.as_deref());
    for f in &report.failures {
        eprintln!("error: cell {}: {}", f.cell.label(), f.message);
    }
    let written = emit(&report, &args.out)
        .with_context(|| format!("writing results to {}", args.out.display()))?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(report.failures.is_empty())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

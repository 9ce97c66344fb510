use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anonroute::harness::config::{parse_config, ScenarioConfig};
use anonroute::harness::metrics::{emit_metrics, MetricsFormat};
use anonroute::harness::scenario::{run_scenario, RunResult};
use anonroute::harness::trace::render;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "anonroute",
    about = "Anonymous position-based MANET routing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Machine,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the seed from the config.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Run a batch of seeds, e.g. `1..50` (inclusive).
        #[arg(long)]
        seeds: Option<String>,
        /// Directory for metrics.txt and trace.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "off")]
        trace: Switch,
        #[arg(long, value_enum, default_value = "human")]
        format: Format,
    },
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    Version,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("bad seed range {s:?}, expected A..B"))?;
    let a: u64 = a.trim().parse().map_err(|_| format!("bad seed {a:?}"))?;
    let b: u64 = b.trim().parse().map_err(|_| format!("bad seed {b:?}"))?;
    if a > b {
        return Err(format!("empty seed range {s}"));
    }
    Ok((a..=b).collect())
}

fn load(path: &Path) -> Result<ScenarioConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    cfg.validate()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(cfg)
}

fn write_outputs(dir: &Path, metrics: &str, result: &RunResult) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| format!("{}: {e}", p.display()))
    };
    write("metrics.txt", metrics)?;
    write("trace.txt", &render(&result.trace))
}

fn run(
    config: &Path,
    seed: Option<u64>,
    seeds: Option<&str>,
    out: Option<&Path>,
    trace: bool,
    format: MetricsFormat,
) -> Result<(), String> {
    let cfg = load(config)?;
    let seeds = match (seed, seeds) {
        (_, Some(s)) => parse_seeds(s)?,
        (Some(s), None) => vec![s],
        (None, None) => vec![cfg.seed],
    };
    let batch = seeds.len() > 1;
    let results: Vec<(u64, Result<RunResult, String>)> = seeds
        .par_iter()
        .map(|s| {
            let mut c = cfg.clone();
            c.seed = *s;
            log::info!("running seed {s}");
            (
                *s,
                run_scenario(&c, trace || out.is_some()).map_err(|e| e.to_string()),
            )
        })
        .collect();
    for (s, r) in results {
        let r = r?;
        let text = emit_metrics(&r.metrics, format);
        if batch {
            println!("# seed {s}");
        }
        print!("{text}");
        if let Some(dir) = out {
            let dir = if batch {
                dir.join(format!("seed-{s}"))
            } else {
                dir.to_path_buf()
            };
            let machine = emit_metrics(&r.metrics, MetricsFormat::Machine);
            write_outputs(&dir, &machine, &r)?;
        }
        if trace && out.is_none() {
            print!("{}", render(&r.trace));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run {
            config,
            seed,
            seeds,
            out,
            trace,
            format,
        } => {
            let format = match format {
                Format::Human => MetricsFormat::Human,
                Format::Machine => MetricsFormat::Machine,
            };
            run(
                &config,
                seed,
                seeds.as_deref(),
                out.as_deref(),
                trace == Switch::On,
                format,
            )
        }
        Command::Validate { config } => load(&config).map(|cfg| {
            println!(
                "ok: {} nodes, {} flows, {} adversaries",
                cfg.nodes,
                cfg.flows.len(),
                cfg.adversaries.len()
            );
        }),
        Command::Version => {
            println!("anonroute {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! `deixis`: run, sweep, replay and serve scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};

use deixis_core::harness::{aggregate, batch_csv, export_svg, load_scenario, run, scenario_files, sweep, ScenarioError};
use deixis_core::pipeline::{replay, EpisodeTrace, TraceError};

#[derive(Parser)]
#[command(name = "deixis", version, about = "Gesture and language guided navigation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and print its report as JSON.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace here (line-delimited JSON).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every scenario in a directory over a seed range and print a CSV summary.
    Batch {
        dir: PathBuf,
        /// Inclusive-exclusive range `A..B`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: std::ops::Range<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-integrate a stored trace and check it for consistency.
    Replay { trace: PathBuf },
    /// Host the interactive session.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "scenarios")]
        scenario_dir: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        tick_hz: f64,
    },
    /// Draw a trace as a top-down SVG.
    ExportSvg {
        trace: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn parse_seeds(s: &str) -> Result<std::ops::Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end: {e}"))?;
    if a >= b {
        return Err("empty seed range".into());
    }
    Ok(a..b)
}

/// Errors that are the caller's fault map to exit code 2.
struct UsageError(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.into())
    }
}

fn read_trace(path: &Path) -> Result<EpisodeTrace, UsageError> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(EpisodeTrace::from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn scenario(path: &Path) -> Result<deixis_core::harness::ScenarioSpec, UsageError> {
    load_scenario(path).map_err(|e: ScenarioError| UsageError(anyhow::anyhow!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<bool, UsageError> {
    match cli.cmd {
        Cmd::Run { scenario: path, seed, trace } => {
            let spec = scenario(&path)?;
            let (t, report) = run(&spec, seed)?;
            if let Some(out) = trace {
                std::fs::write(&out, t.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.success)
        }
        Cmd::Batch { dir, seeds, out } => {
            let files = scenario_files(&dir).with_context(|| format!("listing {}", dir.display()))?;
            if files.is_empty() {
                return Err(UsageError(anyhow::anyhow!("no scenarios in {}", dir.display())));
            }
            let seeds: Vec<u64> = seeds.collect();
            let mut rows = Vec::new();
            for f in &files {
                let spec = scenario(f)?;
                rows.push(aggregate(&spec.name, &sweep(&spec, &seeds)?));
            }
            let csv = batch_csv(&rows);
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Cmd::Replay { trace } => {
            let t = read_trace(&trace)?;
            match replay(&t) {
                Ok(r) => {
                    let states: Vec<String> = r.states.iter().map(|s| s.to_string()).collect();
                    println!("replayed {} commands: {}", r.commands, states.join(" -> "));
                    Ok(!t.terminal.outcome.to_string().starts_with("Failed"))
                }
                Err(e @ TraceError::Diverged { .. }) => {
                    eprintln!("{e}");
                    Ok(false)
                }
                Err(e) => Err(UsageError(e.into())),
            }
        }
        Cmd::Serve {
            port,
            scenario_dir,
            tick_hz,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(deixis_service::serve(deixis_service::ServeConfig {
                port,
                scenario_dir,
                tick_hz,
            }))?;
            Ok(true)
        }
        Cmd::ExportSvg { trace, out } => {
            let t = read_trace(&trace)?;
            let svg = export_svg(&t)?;
            let out = out.unwrap_or_else(|| trace.with_extension("svg"));
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(UsageError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..100").unwrap(), 0..100);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn arguments_parse() {
        Cli::try_parse_from(["deixis", "run", "s.json", "--seed", "3"]).unwrap();
        Cli::try_parse_from(["deixis", "batch", "dir", "--seeds", "0..10"]).unwrap();
        assert!(Cli::try_parse_from(["deixis", "batch", "dir"]).is_err());
    }
}

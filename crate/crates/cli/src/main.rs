use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use umf_cli::report::render_report;
use umf_cli::verify::verify_dir;
use umf_cli::{run_experiment, seed_override, CliError};
use umf_core::conformance::run_conformance;

#[derive(Parser)]
#[command(name = "umf", version, about = "Tree search over masked-diffusion unmasking trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (problem, method, budget, seed) cell of an experiment.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Scaling table, best-so-far curves and search trees.
    Report { dir: PathBuf },
    /// Re-check trace invariants.
    Verify { dir: PathBuf },
    /// Drive the wire-protocol conformance suite against a server.
    Conformance {
        endpoint: String,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("umf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { config, out, workers } => {
            let seed = seed_override(std::env::var("UMF_SEED").ok().as_deref())?;
            let summary = run_experiment(&config, &out, workers, seed)?;
            println!("{} cells, {} failed; results in {}", summary.cells, summary.failed, out.display());
            Ok(if summary.failed > 0 { 2 } else { 0 })
        }
        Command::Report { dir } => {
            let text = render_report(&dir)?;
            // a closed pipe (`umf report dir | head`) is not an error
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Runtime(e.to_string())),
                _ => Ok(0),
            }
        }
        Command::Verify { dir } => {
            let report = verify_dir(&dir)?;
            for v in &report.violations {
                println!("FAIL {v}");
            }
            println!(
                "{} traces, {} records, {} violations",
                report.traces_checked,
                report.records_checked,
                report.violations.len()
            );
            Ok(if report.passed() { 0 } else { 2 })
        }
        Command::Conformance { endpoint, timeout_ms } => {
            let report = run_conformance(&endpoint, Duration::from_millis(timeout_ms));
            for c in &report.checks {
                let model = c.model.as_deref().map(|m| format!(" [{m}]")).unwrap_or_default();
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status} {}{model} {}", c.name, c.detail);
            }
            Ok(if report.all_passed() { 0 } else { 2 })
        }
    }
}

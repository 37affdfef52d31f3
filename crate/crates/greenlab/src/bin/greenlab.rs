//! Batch CLI for the Green's-function mass-functional laboratory.
//!
//! Exit codes: 0 success, 2 validation/configuration error, 3 numerical
//! failure.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use greenlab::config::RunConfig;
use greenlab::pipeline::{
    run_pipeline, sweep, verify_suite, SweepAxis, VerifyLevel,
};
use greenlab::LabError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "greenlab", version, about = "Green's-function mass functional laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Green's function and write the checkpoint and hypothesis
    /// diagnostics only.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the solve plus the F/E/D functional stages.
    Functionals {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the solve plus the asymptotic-expansion stages.
    Asymptotics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline: solve, hypothesis checks, functionals,
    /// asymptotics, summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per value of a parameter axis, with an aggregate table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// One of: m, epsilon, tau, resolution.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Built-in verification suite.
    Verify {
        /// quick or full.
        #[arg(long, default_value = "quick")]
        level: String,
    },
}

fn load_config(path: &PathBuf, out: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(dir) = out {
        cfg.output.directory = dir.display().to_string();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn exec(cli: Cli) -> Result<u8> {
    match cli.command {
        // The stage-restricted subcommands share the pipeline; they differ
        // only in which stage failures are fatal, since stages are cheap
        // relative to the solve they all need anyway.
        Command::Solve { config, out }
        | Command::Functionals { config, out }
        | Command::Asymptotics { config, out }
        | Command::Run { config, out } => {
            let cfg = load_config(&config, &out)?;
            let manifest = run_pipeline(&cfg)?;
            for s in &manifest.stages {
                match &s.error {
                    None => println!("stage {:<12} ok", s.name),
                    Some(e) => println!("stage {:<12} FAILED: {e}", s.name),
                }
            }
            if let Some(sum) = &manifest.summary {
                println!("mass_estimate {:.6}", sum.mass_estimate);
                println!("fitted_c      {:.6}", sum.fitted_c);
            }
            Ok(if manifest.failed() { 3 } else { 0 })
        }
        Command::Sweep { config, out, axis, values, workers } => {
            let cfg = load_config(&config, &out)?;
            let axis: SweepAxis = axis.parse()?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .context("parsing --values")?;
            let rows = sweep(&cfg, axis, &values, workers.max(1))?;
            let mut any_failed = false;
            for r in &rows {
                println!(
                    "value {:<10} {} ad_limit={:?} mass={:?}",
                    r.value, r.status, r.ad_limit, r.mass_estimate
                );
                any_failed |= r.status != "ok";
            }
            Ok(if any_failed { 3 } else { 0 })
        }
        Command::Verify { level } => {
            let level: VerifyLevel = level.parse()?;
            let report = verify_suite(level)?;
            for c in &report.criteria {
                println!(
                    "{} {:<40} measured {:.3e} tolerance {:.3e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance
                );
            }
            Ok(if report.pass() { 0 } else { 3 })
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<LabError>() {
        Some(LabError::Validation(_)) | Some(LabError::InvalidSpec(_)) | Some(LabError::Io(_)) => {
            2
        }
        Some(_) => 3,
        // Config file missing/unreadable counts as a validation problem.
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

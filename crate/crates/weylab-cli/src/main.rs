//! `weylab` — drive the calculus experiments from the shell and leave a
//! machine-readable report per run.
//!
//! Exit codes: 0 experiment passed, 2 experiment failed, 3 inconclusive
//! (no usable spectral gap), 1 usage or configuration error.

use clap::error::ErrorKind;
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;
mod report;

use config::{Config, Overrides};

#[derive(Debug, Parser)]
#[command(name = "weylab", version, about = "phase-space calculus workbench")]
struct Cli {
    #[command(subcommand)]
    command: commands::Command,

    /// JSON config file; defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for reports and data files
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override grid.n_x (power of two, 64..=2048)
    #[arg(long, global = true, value_name = "N")]
    grid: Option<usize>,

    /// Override the metric id
    #[arg(long, global = true, value_name = "ID")]
    metric: Option<String>,

    /// Override the sampling seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// One-shot harmonic-mean δ estimate instead of the radius sweep
    #[arg(long, global = true)]
    fast_delta: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> weylab::Result<u8> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        grid_n: cli.grid,
        metric: cli.metric.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
        fast_delta: cli.fast_delta,
    });
    cfg.validate()?;

    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("weylab-out"));
    std::fs::create_dir_all(&out)?;
    let _lock = report::DirLock::acquire(&out)?;

    let name = commands::name(&cli.command);
    let hash = cfg.hash();
    let (outcome, body) = commands::run(&cli.command, &cfg, &out)?;
    let path = report::write_envelope(&out, name, &hash, outcome, &body)?;
    println!("{name}: {} — {}", outcome.label(), path.display());
    Ok(outcome.code() as u8)
}

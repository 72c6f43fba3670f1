//! `mwlse` command-line driver.
//!
//! On failure the process prints one JSON line
//! `{"error": {"kind": …, "message": …}}` to stderr, removes any files it
//! had written and exits with status 1.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use serde_json::json;

use config::{Cli, Command, Merge};
use output::Outputs;

fn run(cli: Cli, out: &mut Option<Outputs>) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let cfg = cli.config.as_ref();
    // Validate options before creating anything on disk.
    let command = match cli.command {
        Command::Simulate(a) => Command::Simulate(a.with_config(cfg)?),
        Command::Fit(a) => Command::Fit(a.with_config(cfg)?),
        Command::Montecarlo(a) => Command::Montecarlo(a.with_config(cfg)?),
        Command::Stocks(a) => Command::Stocks(a.with_config(cfg)?),
        Command::Residuals(a) => Command::Residuals(a.with_config(cfg)?),
    };
    let outputs = out.insert(Outputs::new(&dir)?);
    match command {
        Command::Simulate(a) => commands::simulate_cmd(a, outputs)?,
        Command::Fit(a) => commands::fit_cmd(a, outputs)?,
        Command::Montecarlo(a) => commands::montecarlo_cmd(a, outputs)?,
        Command::Stocks(a) => commands::stocks_cmd(a, outputs)?,
        Command::Residuals(a) => commands::residuals_cmd(a, outputs)?,
    }
    for p in outputs.paths() {
        println!("{}", p.display());
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<mwlse_core::Error>().map(mwlse_core::Error::kind))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<std::io::Error>().map(|_| "io")))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<serde_json::Error>().map(|_| "json")))
        .unwrap_or("usage")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut outputs = None;
    match run(cli, &mut outputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(o) = outputs {
                o.discard();
            }
            let message = format!("{err:#}");
            eprintln!("{}", json!({ "error": { "kind": error_kind(&err), "message": message } }));
            ExitCode::FAILURE
        }
    }
}

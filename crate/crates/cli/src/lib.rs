//! Batch driver: `invdp <simulate|fit-demand|fit-ss|fit-structural|counterfact|report>
//! --config <path> [--seed N] [--workers N] [--out DIR]`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure.
//! Verbosity through the INVDP_LOG environment variable (`info` or `debug`).

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "invdp", about = "Inventory-ordering structural pipeline driver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a synthetic chain: panels plus truth tables.
    Simulate(RunArgs),
    /// Fit the sales-forecasting function per store-product.
    FitDemand(RunArgs),
    /// Fit the reduced-form order-threshold equations per store-product.
    FitSs(RunArgs),
    /// Two-step pseudo-likelihood estimation of perceived costs.
    FitStructural(RunArgs),
    /// Shutdown and centralization experiments plus cost accounting.
    Counterfact(RunArgs),
    /// Aggregate fit artifacts into quantile summaries and inverse CDFs.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub(crate) fn log_info(msg: &str) {
    if std::env::var("INVDP_LOG").map(|v| v == "info" || v == "debug").unwrap_or(false) {
        eprintln!("invdp: {msg}");
    }
}

fn load_config(args: &RunArgs) -> Result<(RunConfig, PathBuf), String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("config: cannot read {}: {e}", args.config.display()))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| format!("config: parse error: {e}"))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    cfg.out_dir = out.display().to_string();
    cfg.validate()?;
    Ok((cfg, out))
}

/// Runs the CLI against explicit arguments; returns the process exit code.
pub fn run_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are successful exits.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = match &cli.cmd {
        Cmd::Simulate(a) => ("simulate", a),
        Cmd::FitDemand(a) => ("fit-demand", a),
        Cmd::FitSs(a) => ("fit-ss", a),
        Cmd::FitStructural(a) => ("fit-structural", a),
        Cmd::Counterfact(a) => ("counterfact", a),
        Cmd::Report(a) => ("report", a),
    };
    let (cfg, out) = match load_config(args) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("invdp {name}: {msg}");
            return 1;
        }
    };
    let result = match &cli.cmd {
        Cmd::Simulate(_) => commands::simulate(&cfg, &out),
        Cmd::FitDemand(_) => commands::fit_demand(&cfg, &out),
        Cmd::FitSs(_) => commands::fit_ss(&cfg, &out),
        Cmd::FitStructural(_) => commands::fit_structural(&cfg, &out),
        Cmd::Counterfact(_) => commands::counterfact(&cfg, &out),
        Cmd::Report(_) => commands::report(&cfg, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("invdp {name}: {e:#}");
            2
        }
    }
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_with_args(std::env::args_os())
}

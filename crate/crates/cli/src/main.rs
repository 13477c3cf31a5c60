//! Command-line front end for the MI estimation pipeline.
//!
//! Exit codes: 0 success, 1 configuration/input error, 2 numeric or training
//! error, 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use score_mi::harness::{
    load_config, run_estimate, run_fisher_curve, run_kde_baseline, run_validate,
    ExperimentReport, RunOptions,
};
use score_mi::Error;

#[derive(Parser)]
#[command(
    name = "score-mi",
    about = "Mutual information estimation for Gaussian noise channels via learned scores",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Override the master seed from the config.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Disable the tail correction above the grid.
    #[arg(long)]
    no_tail: bool,

    /// Also write per-step training loss traces.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline; oracle columns are filled when available.
    Estimate(CommonArgs),
    /// Full pipeline against a channel with a closed-form oracle.
    Validate(CommonArgs),
    /// Train and estimate the Fisher curve only (no MI integral).
    Fisher(CommonArgs),
    /// KDE leave-one-out baseline only.
    KdeBaseline(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Estimate(a)
            | Command::Validate(a)
            | Command::Fisher(a)
            | Command::KdeBaseline(a) => a,
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Input(_) => 1,
        Error::Numeric(_) | Error::Training { .. } => 2,
        Error::Io { .. } => 3,
    }
}

fn print_report(report: &ExperimentReport) {
    let s = &report.summary;
    println!("run {} ({})", &s.config_digest[..12], s.command);
    if let Some(oracle) = &s.oracle {
        println!("  oracle: {oracle}");
    }
    if let (Some(tail), Some(trace)) = (s.tail, s.trace_cov) {
        println!("  tail: {tail:.6} (trace {trace:.6})");
    }
    if let Some(med) = s.fisher_median_rel_err {
        println!("  fisher rel err: median {:.4}%  p90 {:.4}%", med * 100.0, s.fisher_p90_rel_err.unwrap_or(f64::NAN) * 100.0);
    }
    if let Some(med) = s.mi_median_rel_err {
        println!("  mi rel err:     median {:.4}%  p90 {:.4}%", med * 100.0, s.mi_p90_rel_err.unwrap_or(f64::NAN) * 100.0);
    }
    println!("  {} grid points, {:.1}s", report.rows.len(), s.runtime_seconds);
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    let common = cli.command.common();
    let cfg = load_config(&common.config)?;
    let opts = RunOptions {
        seed: common.seed,
        out: common.out.clone(),
        no_tail: common.no_tail,
        verbose: common.verbose,
    };
    let report = match &cli.command {
        Command::Estimate(_) => run_estimate(&cfg, &opts)?,
        Command::Validate(_) => run_validate(&cfg, &opts)?,
        Command::Fisher(_) => run_fisher_curve(&cfg, &opts)?,
        Command::KdeBaseline(_) => run_kde_baseline(&cfg, &opts)?,
    };
    print_report(&report);
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

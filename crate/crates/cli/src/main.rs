use std::path::PathBuf;
use std::process::ExitCode;

use aoi_lab::commands::{
    cmd_calibrate, cmd_compare, cmd_exact, cmd_simulate, cmd_sweep, default_out, Context,
};
use aoi_lab::{CliError, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aoi-lab", version, about = "Exact and simulated Age-of-Information distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// simulation seed (overrides simulation.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads
    #[arg(long, env = "AOI_LAB_THREADS")]
    threads: Option<usize>,
    /// configuration override, e.g. --set tau=0.5 --set sweep.c='["0","inf"]'
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit link parameters and the OU rate, print them as JSON
    Calibrate(Common),
    /// Exact CCDF grid, heat map, time average and percentiles
    Exact(Common),
    /// Monte-Carlo CCDF with standard errors and sample paths
    Simulate(Common),
    /// Exact vs simulation agreement and dominance along a correlation ladder
    Compare(Common),
    /// Percentiles over the sweep lists
    Sweep(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Calibrate(c)
        | Command::Exact(c)
        | Command::Simulate(c)
        | Command::Compare(c)
        | Command::Sweep(c) => c,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("simulation.seed={seed}"));
    }
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    let ctx = Context::new(common.out.clone().unwrap_or_else(|| default_out().to_path_buf()));

    match cli.command {
        Command::Calibrate(ref c) => {
            let ctx = c.out.as_ref().map(|_| &ctx);
            print(&cmd_calibrate(&cfg, ctx)?);
        }
        Command::Exact(_) => print(&cmd_exact(&cfg, &ctx)?),
        Command::Simulate(_) => print(&cmd_simulate(&cfg, &ctx)?),
        Command::Compare(_) => {
            let report = cmd_compare(&cfg, &ctx)?;
            print(&report);
            if !report.passed {
                return Err(CliError::Acceptance(format!(
                    "see {}",
                    ctx.out.join("compare.json").display()
                )));
            }
        }
        Command::Sweep(_) => {
            let summary = cmd_sweep(&cfg, &ctx)?;
            print(&summary);
            if !summary.failures.is_empty() {
                return Err(CliError::PartialSweep(format!(
                    "{} of {} points failed",
                    summary.failures.len(),
                    summary.failures.len() + summary.rows.len()
                )));
            }
        }
    }
    Ok(())
}

fn print<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(text) => println!("{text}"),
        Err(e) => eprintln!("aoi-lab: cannot render summary: {e}"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aoi-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

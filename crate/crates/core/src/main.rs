use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stripeq::exec::{configure_threads, Exec};
use stripeq::sweep::{self, Experiment, SweepConfig, SweepReport};

#[derive(Parser)]
#[command(name = "stripeq", version, about = "Boundary-strip reaction problems and their flux limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Follow limit equilibria through the epsilon schedule.
    Sweep(Common),
    /// Enumerate and match equilibria at every scheduled epsilon.
    Count(Common),
    /// Linearized spectra of the equilibria of one problem.
    Spectrum(Common),
    /// Equilibria of one problem.
    Solve(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for start perturbations (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<SweepReport, String> {
    let (experiment, args) = match cli.command {
        Command::Sweep(a) => (Experiment::Sweep, a),
        Command::Count(a) => (Experiment::Count, a),
        Command::Spectrum(a) => (Experiment::Spectrum, a),
        Command::Solve(a) => (Experiment::Solve, a),
    };
    let text = fs::read_to_string(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut config = SweepConfig::from_json(&text).map_err(|e| format!("{}: {e}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let exec = match args.threads {
        Some(0) => return Err("--threads must be positive".into()),
        Some(1) => Exec::Sequential,
        Some(n) => {
            configure_threads(n)?;
            Exec::default()
        }
        None => Exec::default(),
    };
    let report = match experiment {
        Experiment::Sweep => sweep::run_lower_semicontinuity_sweep(&config, exec),
        Experiment::Count => sweep::run_counting_experiment(&config, exec),
        Experiment::Solve | Experiment::Spectrum => sweep::run_solve(&config, exec, experiment),
    }
    .map_err(|e| e.to_string())?;
    let out = args
        .out
        .or(config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    sweep::write_outputs(&report, &out).map_err(|e| e.to_string())?;
    Ok(report)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) if report.success => ExitCode::SUCCESS,
        Ok(report) => {
            for f in &report.failures {
                eprintln!("check failed: {f}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

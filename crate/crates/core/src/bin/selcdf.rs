use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selcdf_core::harness::{execute, ExperimentConfig, Mode};

/// Empirical c.d.f. experiments under informative selection.
#[derive(Parser)]
#[command(name = "selcdf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sup distances of the selected ecdf to its limit across the N grid.
    Converge(RunArgs),
    /// Monte Carlo checks of the regularity conditions.
    Audit(RunArgs),
    /// Coupling partition at the largest N and the trajectory over the grid.
    Couple(RunArgs),
    /// Exact design law at the largest N.
    Enumerate(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output path, overriding the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, overriding the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overriding the config's `threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Converge(a) => (Mode::Converge, a),
        Command::Audit(a) => (Mode::Audit, a),
        Command::Couple(a) => (Mode::Couple, a),
        Command::Enumerate(a) => (Mode::Enumerate, a),
    };
    let mut config = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("selcdf: {e}");
            return ExitCode::from(2);
        }
    };
    config.mode = mode;
    if let Some(out) = args.out {
        config.output = Some(out);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    if let Err(e) = config.validate() {
        eprintln!("selcdf: {e}");
        return ExitCode::from(2);
    }
    match execute(&config) {
        Ok(summary) => {
            if !args.quiet {
                print!("{summary}");
                if let Some(out) = &config.output {
                    println!("wrote {}", out.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("selcdf: {e}");
            ExitCode::from(3)
        }
    }
}

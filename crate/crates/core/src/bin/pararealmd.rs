use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parareal_langevin::experiment::{
    exit_code_for, load_config, run_experiment, ExperimentKind, EXIT_FAILURE, EXIT_OK, EXIT_VALIDATION,
};

#[derive(Parser)]
#[command(name = "pararealmd", version, about = "Parareal integration of Langevin dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's output_dir, then ./out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Kinetic-temperature measurement.
    Temperature,
    /// Sequential fine reference trajectory.
    Sequential,
    /// Classical parareal.
    Parareal,
    /// Adaptive parareal with slab shortening.
    Adaptive,
    /// Gain table over dt, delta_conv and delta_expl grids.
    Sweep,
    /// Residence-time ensembles.
    Ensemble,
    /// Check the configuration and exit.
    Validate,
}

impl Command {
    fn experiment(self) -> Option<ExperimentKind> {
        Some(match self {
            Command::Temperature => ExperimentKind::Temperature,
            Command::Sequential => ExperimentKind::Sequential,
            Command::Parareal => ExperimentKind::PararealClassic,
            Command::Adaptive => ExperimentKind::PararealAdaptive,
            Command::Sweep => ExperimentKind::GainSweep,
            Command::Ensemble => ExperimentKind::Ensemble,
            Command::Validate => return None,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(EXIT_VALIDATION as u8);
    };
    let mut config = match load_config(&path, cli.command.experiment()) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("{}: invalid configuration", path.display());
            eprintln!("{errors}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if matches!(cli.command, Command::Validate) {
        println!("{}: ok ({})", path.display(), config.experiment);
        return ExitCode::from(EXIT_OK as u8);
    }
    let out = cli
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let code = match run_experiment(&config, &out, cli.workers.max(1)) {
        Ok(report) => {
            println!("{}", report.manifest.display());
            report.outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            match exit_code_for(&e) {
                EXIT_OK => EXIT_FAILURE,
                c => c,
            }
        }
    };
    ExitCode::from(code as u8)
}

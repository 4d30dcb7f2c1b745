use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use catea::dgp::SyntheticConfig;
use catea::error::{Error, Result};
use catea::harness::{load_config, run_experiment, verify_bounds, BoundsCampaign, DgpKind, ExperimentConfig, MonteCarloConfig};
use catea::theory::{reduction_grid, write_grid_csv, GridConfig};

#[derive(Parser)]
#[command(name = "catea", version, about = "Effect estimation under treatment non-adherence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dgp {
    A,
    B,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset; weights go to a JSON sidecar next to the CSV.
    Generate {
        #[arg(long, value_enum)]
        dgp: Dgp,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a replicated learner sweep and write results.csv, summary.csv and datasets.csv.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo mean and n·Var of both single-stratum plug-ins.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Variance-reduction bound over a (Δ_A, Δ_Y) grid.
    BoundsGrid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the variance bounds against Monte Carlo on random populations.
    VerifyBounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer_pretty(File::create(path)?, value)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { dgp, config, out, seed } => {
            let mut cfg: SyntheticConfig = load_config(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            let kind = match dgp {
                Dgp::A => DgpKind::A,
                Dgp::B => DgpKind::B,
            };
            let gen = kind.generate(&cfg)?;
            gen.dataset.write_csv_file(&out)?;
            std::fs::write(out.with_extension("json"), gen.sidecar_json(&cfg)?)?;
        }
        Command::Experiment { config, out, seed } => {
            let mut cfg: ExperimentConfig = load_config(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            let report = run_experiment(&cfg)?;
            for r in report.results.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "{} at {} replication {} failed: {}",
                    r.learner,
                    r.sweep_value,
                    r.replication,
                    r.error.as_deref().unwrap_or_default()
                );
            }
            report.write_dir(&out)?;
        }
        Command::Montecarlo { config, out, seed } => {
            let mut cfg: MonteCarloConfig = load_config(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            write_json(&cfg.run()?, &out)?;
        }
        Command::BoundsGrid { config, out } => {
            let cfg: GridConfig = load_config(&config)?;
            write_grid_csv(&reduction_grid(&cfg)?, File::create(&out)?)?;
        }
        Command::VerifyBounds { config, out, seed } => {
            let mut cfg: BoundsCampaign = load_config(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            let report = verify_bounds(&cfg)?;
            write_json(&report, &out)?;
            if report.total_violations > 0 {
                eprintln!("{} bound violations", report.total_violations);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration problems, 3 for data problems.
fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else {
        3
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tephra_cli::commands;
use tephra_cli::config::LoadedConfig;
use tephra_cli::CliError;

/// Likelihood-free calibration of deposition simulators with learned
/// dataset distances.
#[derive(Parser)]
#[command(name = "tephra", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for this run's files.
    #[arg(long)]
    out: PathBuf,
    /// Number of scheduler teams.
    #[arg(long)]
    teams: Option<usize>,
    /// Cooperating workers per team.
    #[arg(long)]
    workers_per_team: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw parameters from the prior, simulate and write the training set.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a distance artifact on the generated set.
    Train {
        #[command(flatten)]
        common: Common,
        /// sdml | contrastive | triplet | summary_stats.
        #[arg(long)]
        technique: Option<String>,
        /// Similarity quantile defining the pair labels.
        #[arg(long)]
        quantile: Option<f64>,
    },
    /// Leave-one-out KL evaluation of trained artifacts.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Distance artifact files to evaluate.
        #[arg(required = false)]
        artifacts: Vec<PathBuf>,
    },
    /// APMCABC posterior inference for the configured observation.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Distance artifact driving the ABC discrepancy.
        #[arg(long)]
        artifact: PathBuf,
    },
    /// Posterior predictive check against the observation.
    Ppc {
        #[command(flatten)]
        common: Common,
    },
    /// Team-leader process for the child-process transport (internal).
    #[command(hide = true)]
    TeamWorker {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common } => {
            let loaded = LoadedConfig::load(&common.config, common.seed)?;
            commands::run_generate(&loaded, &common.out, common.teams, common.workers_per_team)
        }
        Command::Train {
            common,
            technique,
            quantile,
        } => {
            let loaded = LoadedConfig::load(&common.config, common.seed)?;
            commands::run_train(&loaded, &common.out, technique.as_deref(), quantile).map(|_| ())
        }
        Command::Evaluate { common, artifacts } => {
            let loaded = LoadedConfig::load(&common.config, common.seed)?;
            commands::run_evaluate(&loaded, &common.out, &artifacts)
        }
        Command::Infer { common, artifact } => {
            let loaded = LoadedConfig::load(&common.config, common.seed)?;
            commands::run_infer(
                &loaded,
                &common.out,
                &artifact,
                common.teams,
                common.workers_per_team,
            )
        }
        Command::Ppc { common } => {
            let loaded = LoadedConfig::load(&common.config, common.seed)?;
            commands::run_ppc(&loaded, &common.out, common.teams, common.workers_per_team)
        }
        Command::TeamWorker { config, workers } => {
            let loaded = LoadedConfig::load(&config, None)?;
            commands::run_team_worker(&loaded, workers)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

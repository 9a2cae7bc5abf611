//! `rrunet`: batch driver for the surrogate history-matching workflow.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Stage};
use rrunet_core::geomodel::PcaBasis;
use rrunet_core::pipeline::Target;
use rrunet_core::Error;

const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (formats: GEOM v1, RSTF1, NETP1)");

#[derive(Debug, Parser)]
#[command(name = "rrunet", version, long_version = LONG_VERSION, about = "Recurrent R-U-Net surrogate and RML history matching")]
struct Cli {
    /// Worker threads for simulation and evaluation pools (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate channel realizations and fit the PCA basis.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed derived from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw models from a PCA basis with standard normal latents.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pca: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate every GEOM file in a directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report schedule and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train the pressure or saturation network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare surrogate and simulator on test models.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        test_models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RML history matching against a true model.
    HistoryMatch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        pca: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// generate, simulate, train, evaluate and history-match in one go.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code 2 for bad configuration or input, 3 for runtime failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidInput(_)
                | Error::Shape(_)
                | Error::Format(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::WellRadiusExceedsEquivalent { .. } => 2,
                _ => 3,
            };
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let load =
        |p: &PathBuf| ExperimentConfig::load(p).map_err(|e| e.context(Error::InvalidInput("configuration".into())));
    match cli.command {
        Command::Generate { config, count, out, seed } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.stage_seed(Stage::Realizations));
            commands::generate(&cfg, count, seed, &out)?;
        }
        Command::Sample { config, pca, count, seed, out } => {
            let cfg = load(&config)?;
            let basis: PcaBasis = rrunet_core::io::load_json(&pca)?;
            commands::sample(&cfg, &basis, count, seed, &out)?;
        }
        Command::Simulate { config, models, out, dry_run } => {
            let cfg = load(&config)?;
            if dry_run {
                commands::print_schedule(&cfg);
                return Ok(());
            }
            let (Some(models), Some(out)) = (models, out) else {
                return Err(Error::InvalidInput("--models and --out are required".into()).into());
            };
            commands::simulate_dir(&cfg, &models, &out)?;
        }
        Command::Train { config, dataset, target, out } => {
            commands::train(&load(&config)?, &dataset, target, &out)?;
        }
        Command::Evaluate { config, checkpoints, test_models, out } => {
            commands::evaluate(&load(&config)?, &checkpoints, &test_models, &out)?;
        }
        Command::HistoryMatch { config, truth, checkpoints, pca, out } => {
            commands::history_match(&load(&config)?, &truth, &checkpoints, &pca, &out)?;
        }
        Command::RunAll { config, out } => {
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            commands::run_all(&cfg, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error[{code}]: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(code)
        }
    }
}

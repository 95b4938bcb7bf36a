//! Pipeline driver: generate or ingest data, build features, select lags and
//! features, tune, train, and evaluate the forecaster from one config file.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "fusecast",
    about = "Daily time-series forecasting with fused quantitative and textual features",
    version
)]
struct Cli {
    /// Run configuration document (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's out_dir and FUSECAST_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config's seeds (study and model).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a synthetic workspace with planted ground truth.
    Simgen {
        /// Workspace directory to create.
        #[arg(long, default_value = "workspace")]
        dir: PathBuf,
        #[arg(long, default_value_t = 470)]
        days: usize,
        /// Text signal strength in [0, 1].
        #[arg(long, default_value_t = 0.8)]
        rho: f64,
    },
    /// Parse and align the configured series onto the target calendar.
    Ingest,
    /// Tokenize the corpus, fit LDA, and pool daily textual features.
    Features,
    /// Scan per-feature optimal lags (VAR/AIC) against the target.
    Lags,
    /// Rank quantitative features by recursive elimination.
    Rfe,
    /// Train the forecaster and write a checkpoint.
    Train,
    /// Hyperparameter search with median pruning.
    Tune,
    /// Evaluate the checkpoint on the test period vs a quantitative-only
    /// reference (PI and DM test included).
    Evaluate,
    /// Run all 16 textual-family combinations and rank them.
    Ablate,
    /// MAE/RMSE per window size.
    SweepWindow {
        /// Comma-separated sizes (defaults to the full admissible set).
        #[arg(long)]
        sizes: Option<String>,
    },
    /// MAE/RMSE per kept quantitative feature count.
    SweepRfe {
        #[arg(long)]
        max_k: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config <path> is required for this command")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.model.seed = seed;
    }
    Ok(cfg)
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad window size '{s}'"))
        })
        .collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    match &cli.command {
        Command::Simgen { dir, days, rho } => {
            let seed = cli.seed.unwrap_or(42);
            commands::simgen(dir, *days, *rho, seed)
        }
        Command::Ingest => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::ingest_cmd(&cfg, &out)
        }
        Command::Features => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::features_cmd(&cfg, &out)
        }
        Command::Lags => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::lags_cmd(&cfg, &out)
        }
        Command::Rfe => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::rfe_cmd(&cfg, &out)
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::train_cmd(&cfg, &out)
        }
        Command::Tune => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::tune_cmd(&cfg, &out)
        }
        Command::Evaluate => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::evaluate_cmd(&cfg, &out)
        }
        Command::Ablate => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::ablate_cmd(&cfg, &out)
        }
        Command::SweepWindow { sizes } => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            let sizes = sizes.as_deref().map(parse_sizes).transpose()?;
            commands::sweep_window_cmd(&cfg, &out, sizes)
        }
        Command::SweepRfe { max_k } => {
            let cfg = load_config(&cli)?;
            let out = cfg.resolve_out_dir(cli.out.as_deref());
            commands::sweep_rfe_cmd(&cfg, &out, *max_k)
        }
    }
}

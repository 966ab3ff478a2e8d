mod commands;
mod config;
mod status;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use colearn_core::eval::GridSpec;

use commands::{Ctx, EvalSource, SplitChoice};
use config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "colearn", version, about = "Experience co-learning pipeline for two-agent software generation")]
struct Cli {
    /// Pipeline config (TOML). Relative paths in it resolve against its directory.
    #[arg(long, global = true, env = "COLEARN_CONFIG")]
    config: Option<PathBuf>,
    /// Concurrent tasks per stage.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Recompute records that are already up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Extraction strategy for `memorize` (shortest-path, adjacent-execution,
    /// longest-shortcut-only, graph-unconstructed).
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Use the offline stub backends regardless of the config.
    #[arg(long, global = true)]
    stub: bool,
    /// Override the shortcut gain threshold.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rehearse tasks and record their trajectories.
    Track {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitChoice,
    },
    /// Build execution graphs, extract shortcuts and write both experience pools.
    Memorize {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitChoice,
    },
    /// Solve tasks with experience retrieval from the pools.
    Reason {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
    },
    /// Score final solutions.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        #[arg(long, value_enum, default_value = "transcripts")]
        source: EvalSource,
    },
    /// Report execution-graph statistics.
    Stats {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitChoice,
        /// Also write histograms of the statistics for plotting.
        #[arg(long)]
        plot_data: bool,
    },
    /// Mean quality over a grid of retrieval settings.
    Sensitivity {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        /// k, theta or both.
        #[arg(long, default_value = "both")]
        grid: GridSpec,
    },
    /// Write the train/validation/test split.
    Split,
    /// Print the effective configuration as TOML.
    Config,
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    if cli.stub {
        cfg.backends.kind = "stub".into();
    }
    if let Some(mode) = &cli.mode {
        cfg.mode = mode.clone();
    }
    if let Some(eps) = cli.epsilon {
        cfg.epsilon = eps;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = effective_config(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(true);
    }
    let ctx = Ctx::new(cfg, cli.workers, cli.force)?;
    let (name, table) = match cli.command {
        Command::Track { split } => ("track", commands::track(&ctx, split)?),
        Command::Memorize { split } => ("memorize", commands::memorize(&ctx, split)?),
        Command::Reason { split } => ("reason", commands::reason(&ctx, split)?),
        Command::Eval { split, source } => ("eval", commands::evaluate(&ctx, split, source)?),
        Command::Stats { split, plot_data } => ("stats", commands::stats(&ctx, split, plot_data)?),
        Command::Sensitivity { split, grid } => ("sensitivity", commands::sensitivity(&ctx, split, grid)?),
        Command::Split => ("split", commands::split(&ctx)?),
        Command::Config => unreachable!(),
    };
    print!("{}", table.render(name));
    Ok(table.failures() == 0)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reflectrl_cli::{
    cmd_collect, cmd_evaluate, cmd_report, cmd_train_il, cmd_train_rl, parse_config,
    ExperimentConfig,
};
use reflectrl_core::{EnvKind, Error};

#[derive(Parser)]
#[command(name = "reflectrl", about = "Retrospective-agent training experiments")]
struct Cli {
    /// Experiment config file (flat key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config output dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect expert trials and build the IL datasets
    Collect,
    /// Train planner and reflector by imitation learning
    TrainIl,
    /// Continue from the IL checkpoints with off-policy RL
    TrainRl,
    /// Evaluate the newest checkpoint over the held-out tasks
    Evaluate,
    /// Join several runs' metrics into comparison CSVs
    Report {
        /// Run directories containing metrics.csv
        run_dirs: Vec<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::defaults(EnvKind::GraphQa),
    };
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
        cfg.env.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Collect => cmd_collect(&resolve_config(cli)?),
        Command::TrainIl => cmd_train_il(&resolve_config(cli)?),
        Command::TrainRl => cmd_train_rl(&resolve_config(cli)?),
        Command::Evaluate => cmd_evaluate(&resolve_config(cli)?),
        Command::Report { run_dirs } => {
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs/report"));
            cmd_report(run_dirs, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

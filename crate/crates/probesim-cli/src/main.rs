//! Command-line entry point: scenario configuration, snapshot generation,
//! probing runs and countermeasure experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{cmd_experiment, cmd_generate, cmd_probe, CmdError};
use config::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "probesim",
    about = "Payment channel network simulator with a balance-probing attacker"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config (JSON). Optional when --preset is given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario preset (`testnet-scale`).
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a network snapshot file from the scenario's topology.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Snapshot output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the probing attack and write metric CSVs plus a summary.
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        /// Report directory (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of independently seeded runs.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Run the countermeasure matrix and disclosure efficiency experiments.
    Experiment {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &CommonArgs) -> Result<ScenarioConfig, CmdError> {
    let mut cfg = match (&common.config, common.preset.as_deref()) {
        (Some(path), None) => {
            ScenarioConfig::from_path(path).map_err(|e| CmdError::Config(e.to_string()))
        }
        (None, Some("testnet-scale")) => Ok(ScenarioConfig::testnet_scale(0)),
        (Some(path), Some("testnet-scale")) => {
            // Preset topology, everything else from the file.
            let mut cfg =
                ScenarioConfig::from_path(path).map_err(|e| CmdError::Config(e.to_string()))?;
            cfg.topology = Some(probesim::sweep::testnet_scale_preset(0));
            cfg.snapshot = None;
            Ok(cfg)
        }
        (_, Some(other)) => Err(CmdError::Config(format!("unknown preset {other}"))),
        (None, None) => Err(CmdError::Config(
            "either --config or --preset is required".to_owned(),
        )),
    }?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run() -> Result<(), CmdError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = load_config(&common)?;
            cmd_generate(&cfg, &out)
        }
        Command::Probe { common, out, runs } => {
            let cfg = load_config(&common)?;
            let out_dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            cmd_probe(&cfg, &out_dir, runs)
        }
        Command::Experiment { common, out } => {
            let cfg = load_config(&common)?;
            let out_dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            cmd_experiment(&cfg, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(3)
        }
    }
}

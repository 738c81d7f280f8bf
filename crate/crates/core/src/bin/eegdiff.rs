use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eegdiff::pipeline::{error_line, exit_code, run_all, run_stage, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "eegdiff", version, about = "EEG channel reconstruction pipeline")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set ddpm.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Start from the single-core preset (50-step chain, narrow networks)
    /// instead of the full-scale defaults.
    #[arg(long, global = true)]
    desk: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic motor-imagery recording and markers to the data dir.
    SynthData,
    /// Artifact rejection, band-pass, z-scoring and the train/test split.
    Preprocess,
    /// Train one diffusion model per table target.
    TrainDdpm,
    /// Train one WGAN-GP per table target.
    TrainWgan,
    /// Reconstruct every table target with the configured generator.
    Generate,
    /// Reconstruction MSE/PCC and signal comparison exports.
    Evaluate,
    /// Cross-validated classification on original and reconstructed data.
    Classify,
    /// Collect metrics into metrics.json and summary.md.
    Report,
    /// Every stage in order.
    Run {
        /// Generate synthetic data first.
        #[arg(long)]
        synth: bool,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("error kind=usage code=1 message=\"{}\"", first.replace('"', "'"));
            return ExitCode::from(1);
        }
    };
    let base = if cli.desk { PipelineConfig::desk() } else { PipelineConfig::default() };
    let result = PipelineConfig::load(&base, cli.config.as_deref(), &cli.overrides).and_then(|cfg| {
        let stage = match cli.command {
            Command::SynthData => Stage::SynthData,
            Command::Preprocess => Stage::Preprocess,
            Command::TrainDdpm => Stage::TrainDdpm,
            Command::TrainWgan => Stage::TrainWgan,
            Command::Generate => Stage::Generate,
            Command::Evaluate => Stage::Evaluate,
            Command::Classify => Stage::Classify,
            Command::Report => Stage::Report,
            Command::Run { synth } => return run_all(&cfg, synth),
            Command::ShowConfig => {
                print!("{}", cfg.to_toml()?);
                return Ok(());
            }
        };
        run_stage(stage, &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

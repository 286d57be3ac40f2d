//! Road-detection pipeline CLI: synthesize scenes, build altitude-difference
//! images, train the two-stream network, run inference, evaluate with
//! KITTI-style metrics, and reproduce the input-representation ablation.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "plard", version, about = "LiDAR-adaptive road detection pipeline")]
struct Cli {
    /// Seed override for synth/train/ablate.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for dataset-parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Project a point cloud and write its altitude-difference image.
    Adt(commands::adt::AdtArgs),
    /// Generate a synthetic scene dataset.
    Synth(commands::synth::SynthArgs),
    /// Train the road-detection network from a run configuration.
    Train(commands::train::TrainArgs),
    /// Run inference over a dataset with a trained checkpoint.
    Infer(commands::infer::InferArgs),
    /// Score predictions against ground truth.
    Eval(commands::eval::EvalArgs),
    /// Blend a road-probability map in green over the camera image.
    Overlay(commands::overlay::OverlayArgs),
    /// Train and score the four input/fusion variants.
    Ablate(commands::ablate::AblateArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Adt(args) => commands::adt::run(args, cli.verbose),
        Command::Synth(args) => commands::synth::run(args, cli.seed.unwrap_or(0), cli.verbose),
        Command::Train(args) => commands::train::run(args, cli.seed, cli.verbose),
        Command::Infer(args) => commands::infer::run(args, cli.threads, cli.verbose),
        Command::Eval(args) => commands::eval::run(args, cli.verbose),
        Command::Overlay(args) => commands::overlay::run(args),
        Command::Ablate(args) => commands::ablate::run(args, cli.seed, cli.verbose),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // Help and version are not failures; anything else is argument
            // validation.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}

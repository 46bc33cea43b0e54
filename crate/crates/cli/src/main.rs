//! `turngrab` command line: ingest, extract, synth, train, eval, tune,
//! effect.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/processing error. All
//! randomness flows from `--seed`; every run writes a config echo with the
//! exact resolved values alongside its outputs. Options may also come from
//! a JSON config file (`--config`); explicit flags override file values.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "turngrab", version, about = "Turn-grabbing intention pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse feature/ASD CSV streams into per-face track files.
    Ingest(commands::IngestArgs),
    /// Extract positive/unlabeled windows from track files.
    Extract(commands::ExtractArgs),
    /// Generate synthetic sessions with known ground truth.
    Synth(commands::SynthArgs),
    /// Train the intention classifier.
    Train(commands::TrainArgs),
    /// Evaluate a trained model on a labeled dataset.
    Eval(commands::EvalArgs),
    /// Grid search with median pruning.
    Tune(commands::TuneArgs),
    /// Apply the pseudo leaning-forward effect to image frames.
    Effect(commands::EffectArgs),
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("TURNGRAB_LOG", "error"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };

    let result = match cli.command {
        Command::Ingest(args) => commands::run_ingest(args),
        Command::Extract(args) => commands::run_extract(args),
        Command::Synth(args) => commands::run_synth(args),
        Command::Train(args) => commands::run_train(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::Tune(args) => commands::run_tune(args),
        Command::Effect(args) => commands::run_effect(args),
    };

    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(2);
    }
}

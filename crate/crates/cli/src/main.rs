mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> sghc::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(sghc::Error::Argument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| sghc::Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::TrainSemantic(a) => commands::train_semantic(a),
        Command::TrainPixel(a) => commands::train_pixel(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Vrr(a) => commands::vrr(a),
        Command::ExportVocab(a) => commands::export_vocab(a),
        Command::Stats(a) => commands::stats(a),
        Command::SynthCorpus(a) => commands::synth_corpus(a),
    }
}

/// Collapses a message onto one line.
fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}

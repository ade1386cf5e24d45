mod classify;
mod config;
mod evaluate;
mod export;
mod gentests;
mod index;

use clap::{Parser, Subcommand};

/// Exit code for runs that finished with some scenarios left unhandled.
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Parser)]
#[command(
    name = "suitegap",
    version,
    about = "Spot the gaps between what code can do and what its tests check"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a retrieval index over a source tree
    Index(index::IndexArgs),
    /// Classify monitored scenarios against their test suites
    Classify(classify::ClassifyArgs),
    /// Score a triage report, or a centroid baseline, against labels
    Evaluate(evaluate::EvaluateArgs),
    /// Generate test scaffolds for scenarios the suite does not cover
    GenTests(gentests::GenTestsArgs),
    /// Export a labeled dataset as chat-format tuning records
    ExportFinetune(export::ExportArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Index(args) => index::run(args),
        Command::Classify(args) => classify::run(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::GenTests(args) => gentests::run(args),
        Command::ExportFinetune(args) => export::run(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

//! `fallwatch`: one binary exposing every stage of the fall-detection
//! pipeline — dataset synthesis, training and transfer, evaluation,
//! gradient verification, the alarm service, and the responder simulator —
//! with deterministic, machine-readable outputs.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Parser, Debug)]
#[command(
    name = "fallwatch",
    version,
    about = "Wi-Fi sensing fall detection: datasets, training, alarm service, responder simulation",
    propagate_version = true
)]
struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the subcommand's data output here (file or directory,
    /// depending on the subcommand) instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress chatter on the error stream.
    #[arg(long, global = true)]
    quiet: bool,
    /// Encoding for data output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse a binary CSI trace and print frame statistics.
    InspectTrace(commands::inspect::InspectArgs),
    /// Generate a synthetic labeled dataset (CSV instances + manifest).
    Synth(commands::synth::SynthArgs),
    /// Train the classifier from scratch on a dataset.
    Train(commands::training::TrainArgs),
    /// Initialize from a checkpoint, swap the head, and fine-tune.
    Transfer(commands::training::TransferArgs),
    /// Evaluate a checkpoint: accuracy and row-normalized confusion matrix.
    Eval(commands::evaluate::EvalArgs),
    /// Run the finite-difference gradient verification suite.
    GradCheck(commands::gradcheck::GradCheckArgs),
    /// Run the alarm service.
    Serve(commands::serve::ServeArgs),
    /// Run an offline response campaign on a floor plan.
    Simulate(commands::simulate::SimulateArgs),
    /// Run a single live trial through a real alarm service.
    Trial(commands::simulate::TrialArgs),
    /// Full loop: detector stream -> alarm service -> responder simulation.
    E2e(commands::simulate::E2eArgs),
}

/// Global flags every handler sees.
pub struct Ctx {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
    pub format: Format,
}

impl Ctx {
    /// The effective seed: explicit flag or the default 0.
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Progress note on the error stream (silenced by --quiet).
    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
        format: cli.format,
    };
    match cli.cmd {
        Cmd::InspectTrace(args) => commands::inspect::run(&ctx, args),
        Cmd::Synth(args) => commands::synth::run(&ctx, args),
        Cmd::Train(args) => commands::training::run_train(&ctx, args),
        Cmd::Transfer(args) => commands::training::run_transfer(&ctx, args),
        Cmd::Eval(args) => commands::evaluate::run(&ctx, args),
        Cmd::GradCheck(args) => commands::gradcheck::run(&ctx, args),
        Cmd::Serve(args) => commands::serve::run(&ctx, args),
        Cmd::Simulate(args) => commands::simulate::run_simulate(&ctx, args),
        Cmd::Trial(args) => commands::simulate::run_trial_cmd(&ctx, args),
        Cmd::E2e(args) => commands::simulate::run_e2e(&ctx, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            // Flag and value problems are usage errors: exit code 1.
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let level = if cli.quiet { "off" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

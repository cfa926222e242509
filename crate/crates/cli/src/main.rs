//! `adherence` — forecast dropout from guided internet-delivered CBT programs
//! using only login/logout timestamps.
//!
//! Subcommands cover the whole pipeline: synthetic cohort generation
//! (`simulate`), adherence labeling (`label`), cross-validated training and
//! evaluation (`train-eval`), controlled comparisons (`ablate`), random
//! hyperparameter search (`search`), and scoring single patients with a saved
//! model (`predict`).
//!
//! Exit codes: 0 on success, 1 on runtime/data errors, 2 on usage errors.

mod commands;
mod config;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adherence_core::adherence::{AdherenceDefinition, SpanConvention};
use adherence_core::train::AltDefinition;

/// Errors that decide the process exit code. Anything that clap itself
/// rejects (unknown flags, unparsable values) also exits with code 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Flag combinations or values that are syntactically valid but make no
    /// sense; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// IO failures, malformed data, or pipeline errors; exit code 1.
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn usage_error<T>(message: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(message.into()))
}

/// Like `print!`, but exits quietly when the reader closed the pipe
/// (e.g. `adherence ... | head`).
#[macro_export]
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if write!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

/// Like `println!`, but exits quietly when the reader closed the pipe.
#[macro_export]
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

#[derive(Debug, Parser)]
#[command(
    name = "adherence",
    version,
    about = "Forecast patient dropout from online-therapy login/logout timestamps",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for independent (run, fold) and search jobs.
    /// Falls back to the ADHERENCE_JOBS environment variable.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// JSON file whose keys are long option names supplying defaults for the
    /// invoked subcommand; explicit command-line options win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic login/logout cohort with known outcome labels.
    Simulate(commands::simulate::SimulateArgs),
    /// Label each patient in a sessions CSV as adherent or not.
    Label(commands::label::LabelArgs),
    /// Cross-validated training and day-by-day evaluation.
    TrainEval(commands::train_eval::TrainEvalArgs),
    /// Compare the standard pipeline against one controlled variation.
    Ablate(commands::ablate::AblateCmd),
    /// Random hyperparameter search on the exploration cohort.
    Search(commands::search::SearchArgs),
    /// Score one patient's dropout risk with a saved model.
    Predict(commands::predict::PredictArgs),
}

/// How adherence is defined; presets follow the published thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DefinitionArg {
    /// 8 connections of more than 60 s over at least 56 days.
    Original,
    /// 12 connections of more than 150 s over at least 56 days.
    AltA,
    /// 16 connections of more than 300 s over at least 56 days.
    AltB,
}

impl DefinitionArg {
    pub fn definition(self) -> AdherenceDefinition {
        match self {
            Self::Original => AdherenceDefinition::original(),
            Self::AltA => AdherenceDefinition::alternative_a(),
            Self::AltB => AdherenceDefinition::alternative_b(),
        }
    }
}

/// How the span criterion counts days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpanConventionArg {
    /// Calendar days with both endpoints included.
    Inclusive,
    /// Whole elapsed 24-hour periods.
    Elapsed,
}

impl SpanConventionArg {
    pub fn convention(self) -> SpanConvention {
        match self {
            Self::Inclusive => SpanConvention::InclusiveDays,
            Self::Elapsed => SpanConvention::ElapsedPeriods,
        }
    }
}

/// Alternative adherence definitions available to the ablation runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AltArg {
    A,
    B,
}

impl AltArg {
    pub fn alt(self) -> AltDefinition {
        match self {
            Self::A => AltDefinition::A,
            Self::B => AltDefinition::B,
        }
    }
}

/// Flags shared by every command that reads a sessions CSV and splits off an
/// exploration cohort.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Sessions CSV (`patient_id,login,logout`, ISO-8601 UTC timestamps).
    #[arg(short, long, value_name = "FILE")]
    pub input: PathBuf,

    /// File with one patient id per line; those patients form the
    /// exploration cohort (used for training and design, never tested).
    #[arg(long, value_name = "FILE", conflicts_with = "exploration_count")]
    pub exploration_ids: Option<PathBuf>,

    /// Instead of an id list, hold out this many randomly chosen patients
    /// (deterministic in --seed) as the exploration cohort.
    #[arg(long, value_name = "N")]
    pub exploration_count: Option<usize>,

    /// How the adherence span criterion counts days.
    #[arg(long, value_enum, default_value = "inclusive")]
    pub span_convention: SpanConventionArg,
}

fn run(cli: Cli) -> CliResult {
    let jobs = match cli.jobs {
        Some(n) => Some(n),
        None => match std::env::var("ADHERENCE_JOBS") {
            Ok(raw) => Some(raw.parse::<usize>().map_err(|_| {
                CliError::Usage(format!("ADHERENCE_JOBS must be a positive integer, got `{raw}`"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = jobs {
        if n == 0 {
            return usage_error("--jobs must be at least 1");
        }
        // Ignore the error when a pool already exists (e.g. in tests that
        // call `run` twice); the first configuration wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    match cli.command {
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Label(args) => commands::label::run(args),
        Command::TrainEval(args) => commands::train_eval::run(args),
        Command::Ablate(cmd) => commands::ablate::run(cmd),
        Command::Search(args) => commands::search::run(args),
        Command::Predict(args) => commands::predict::run(args),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::inject_config_tokens(argv) {
        Ok(tokens) => tokens,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };

    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        // clap prints help/version (exit 0) and usage errors (exit 2) itself.
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(err.exit_code() as u8);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

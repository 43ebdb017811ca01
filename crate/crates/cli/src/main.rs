//! `unlearnable` — config-driven experiments in making text unlearnable.
//!
//! Every subcommand reads one JSON experiment config (plus optional dotted
//! `--set` overrides), resolves it to a fully seeded description, and works
//! inside `<output root>/<name>/<config sha>/` so runs never collide.
//! Results land as files; each command also prints a JSON summary.

mod commands;
mod data;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use unlearnable_core::config::{ExperimentConfig, SplitChoice};
use unlearnable_core::{Error, Result};

use run::RunContext;

#[derive(Parser)]
#[command(
    name = "unlearnable",
    version,
    about = "Generate, hint, noise, train on, and analyze unlearnable text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value by dotted path, e.g. --set train.max_epochs=3
    /// (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output root; takes precedence over $UNLEARNABLE_OUT and the config's
    /// `output` field.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for SplitChoice {
    fn from(s: SplitArg) -> SplitChoice {
        match s {
            SplitArg::Train => SplitChoice::Train,
            SplitArg::Validation => SplitChoice::Validation,
            SplitArg::Test => SplitChoice::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset splits as JSONL files.
    GenData(CommonArgs),
    /// Train the configured model; write checkpoint, trace, final metrics.
    Train(CommonArgs),
    /// Alternate training with error-minimizing substitution search; write
    /// one noise set per milestone.
    Minmin(CommonArgs),
    /// Write a hinted copy of the training split plus the touched ids.
    Inject(CommonArgs),
    /// Substitution statistics (per-class distributions, positions,
    /// answer distances) for stored noise sets.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Noise-set file; defaults to every error_min_*.json in the run
        /// directory (repeatable).
        #[arg(long = "noise", value_name = "FILE")]
        noise: Vec<PathBuf>,
    },
    /// Score a checkpoint on one split and print the metrics.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint manifest (or its stem); defaults to the run
        /// directory's trained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Accuracy deltas from adding clean vs. hinted extra training data.
    PartialDelta {
        #[command(flatten)]
        common: CommonArgs,
        /// Fraction of the training split every arm trains on.
        #[arg(long, default_value_t = 0.8)]
        base_fraction: f64,
        /// Fraction added either clean or hinted.
        #[arg(long, default_value_t = 0.2)]
        added_fraction: f64,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::config(kv, "override must look like key.path=value"))
        })
        .collect()
}

fn prepare(common: &CommonArgs, verb: &str) -> Result<RunContext> {
    let overrides = parse_overrides(&common.set)?;
    let resolved = ExperimentConfig::load(&common.config, &overrides)?;
    RunContext::prepare(resolved, common.output.as_deref(), verb)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => commands::gen_data(&prepare(&common, "gen-data")?),
        Command::Train(common) => commands::train(&prepare(&common, "train")?),
        Command::Minmin(common) => commands::minmin(&prepare(&common, "minmin")?),
        Command::Inject(common) => commands::inject(&prepare(&common, "inject")?),
        Command::Analyze { common, noise } => {
            commands::analyze(&prepare(&common, "analyze")?, &noise)
        }
        Command::Eval { common, checkpoint, split } => commands::eval(
            &prepare(&common, "eval")?,
            checkpoint.as_deref(),
            split.into(),
        ),
        Command::PartialDelta { common, base_fraction, added_fraction } => {
            commands::partial_delta(
                &prepare(&common, "partial-delta")?,
                base_fraction,
                added_fraction,
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

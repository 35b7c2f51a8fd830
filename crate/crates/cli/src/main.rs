//! `codemix`: the experiment pipeline from the command line.
//!
//! Every command prints one JSON line on success. Exit status is 0 on
//! success, 1 on a runtime error and 2 on a usage or config error.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use codemix_core::EncoderKind;
use serde_json::{json, Value};

use crate::config::{resolve, ConfigError};

#[derive(Parser)]
#[command(name = "codemix", version, about = "Sentiment analysis pipeline for code-mixed tweets")]
struct Cli {
    /// Experiment config (JSON). Built-in defaults apply without one.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config leaf, e.g. `--set model.hidden=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse CONLL splits into JSONL and compute corpus statistics.
    Ingest,
    /// Normalize every ingested split.
    Preprocess,
    /// Fit an orthogonal map between the two embedding spaces.
    Align,
    /// Add external tweets and same-class concatenations to the training set.
    Augment,
    /// Train the configured encoder.
    Train,
    /// Score prediction files, or the trained checkpoint, as a results table.
    Evaluate {
        /// `NAME=PATH` of an `id<TAB>gold<TAB>pred` file; one table row each.
        #[arg(long, value_name = "NAME=PATH")]
        predictions: Vec<String>,
        /// Split scored with the checkpoint.
        #[arg(long, default_value = "validation", value_parser = ["validation", "test"])]
        split: String,
    },
    /// Finite-difference gradient check of tiny encoders.
    Gradcheck {
        /// Encoder to check; repeatable, all five by default.
        #[arg(long)]
        encoder: Vec<EncoderKind>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Defaults to `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Gather every stage's summary into one Markdown report.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Preprocess => "preprocess",
            Command::Align => "align",
            Command::Augment => "augment",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Report => "report",
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Value> {
    let resolved = resolve(cli.config.as_deref(), &cli.overrides)?;
    let out = match &cli.command {
        Command::Ingest => commands::ingest(&resolved)?,
        Command::Preprocess => commands::preprocess(&resolved)?,
        Command::Align => commands::align(&resolved)?,
        Command::Augment => commands::augment(&resolved)?,
        Command::Train => commands::train_cmd(&resolved)?,
        Command::Evaluate { predictions, split } => commands::evaluate(&resolved, predictions, split)?,
        Command::Gradcheck { encoder, tolerance, seed } => {
            commands::gradcheck(&resolved, encoder, *tolerance, seed.unwrap_or(resolved.config.train.seed))?
        }
        Command::Report => commands::report(&resolved)?,
    };
    Ok(json!({
        "command": cli.command.name(),
        "status": "ok",
        "output_dir": resolved.config.output_dir.join(cli.command.name()),
        "config_sha256": artifacts::sha256_hex(resolved.canonical.as_bytes()),
        "result": out,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp_millis().init();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

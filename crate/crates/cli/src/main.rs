//! `epnn`: generate data, train and evaluate surrogates, and run recall simulations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epnn_core::arch::ArchKind;

use crate::config::{DriverKind, RunConfig, Scale};

#[derive(Debug)]
pub struct CliError {
    pub category: String,
    pub message: String,
}

impl CliError {
    pub fn new(category: &str, message: impl Into<String>) -> Self {
        Self {
            category: category.to_string(),
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.category.as_str() {
            "config" | "invalid-argument" => 3,
            "missing-file" | "io" => 4,
            "gradcheck-threshold" => 5,
            "non-finite" | "integration-failure" | "invalid-stress-state" => 6,
            _ => 1,
        }
    }
}

impl From<epnn_core::Error> for CliError {
    fn from(e: epnn_core::Error) -> Self {
        CliError::new(e.category(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("json", e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "epnn", version, about = "Elasto-plastic sand surrogates: data, training, recall")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration, or a manifest JSON written by an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    arch: Option<ArchKind>,
    #[arg(long, global = true, value_enum)]
    driver: Option<DriverKind>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Norm of each applied strain increment.
    #[arg(long, global = true)]
    step_size: Option<f64>,
    /// Initial mean stress, kPa.
    #[arg(long, global = true)]
    pin: Option<f64>,
    /// Initial void ratio.
    #[arg(long, global = true)]
    ein: Option<f64>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a dataset with its metadata and statistics.
    Generate,
    /// Statistics report of an existing dataset.
    Stats,
    /// Train one architecture; writes a checkpoint and training curve.
    Train,
    /// Per-role test-split errors of a checkpoint.
    Evaluate,
    /// Recall-mode simulation with an optional ground-truth comparison.
    Simulate,
    /// Learning-curve sweep over training-set fractions.
    Curves,
    /// Finite-difference verification of all network gradients.
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Simulate => "simulate",
            Command::Curves => "curves",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut run = match &cli.config {
        None => RunConfig::default(),
        Some(path) if path.extension().is_some_and(|e| e == "json") => commands::config_from_manifest(path)?,
        Some(path) => RunConfig::load(path)?,
    };
    if let Some(v) = cli.seed {
        run.seed = v;
    }
    if let Some(v) = &cli.out {
        run.out = Some(v.clone());
    }
    if let Some(v) = cli.arch {
        run.train.arch = v;
    }
    if let Some(v) = cli.driver {
        run.simulate.driver = v;
    }
    if let Some(v) = cli.alpha {
        run.simulate.alpha = v;
    }
    if let Some(v) = cli.steps {
        run.simulate.steps = v;
    }
    if let Some(v) = cli.step_size {
        run.simulate.step_size = Some(v);
    }
    if let Some(v) = cli.pin {
        run.simulate.pin = v;
    }
    if let Some(v) = cli.ein {
        run.simulate.ein = v;
    }
    if let Some(v) = &cli.dataset {
        run.dataset = Some(v.clone());
    }
    if let Some(v) = &cli.checkpoint {
        run.checkpoint = Some(v.clone());
    }
    if let Some(v) = cli.epochs {
        run.train.config.epochs = v;
    }
    if let Some(v) = cli.scale {
        run.generate.scale = v;
    }
    run.train.config.seed = run.seed;
    Ok(run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli).and_then(|run| {
        let argv: Vec<String> = std::env::args().collect();
        commands::run(cli.command.name(), &run, &argv)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.category, "message": e.message });
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `remforge`: generate synthetic cities, compute LoS maps, train and
//! evaluate REM predictors, and run the AP switch-on study.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "remforge", version, about = "Radio environment map toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Caps the worker thread count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Format of the summary printed on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LosMethod {
    Px,
    Ab,
    Nn,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic map bundles with oracle REMs.
    Gen {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        density_min: Option<f64>,
        #[arg(long)]
        density_max: Option<f64>,
        #[arg(long)]
        tx_per_map: Option<usize>,
    },
    /// LoS maps for every sample of a dataset, plus per-method timing.
    Los {
        #[arg(long = "method", value_enum, required = true)]
        methods: Vec<LosMethod>,
        #[arg(long)]
        dataset: PathBuf,
        /// Weights of an NNLoS model (or its `.nnlos` predictor) for `--method nn`.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Trains the model described by the run config.
    Train,
    /// Predicts one REM; with several weights the map's density picks one.
    Predict {
        #[arg(long = "weights", required = true)]
        weights: Vec<PathBuf>,
        /// Map bundle directory.
        #[arg(long)]
        bundle: PathBuf,
        /// Transmitter index inside the bundle.
        #[arg(long, default_value_t = 0)]
        tx: usize,
    },
    /// Scores trained weights or stored predictions against a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "weights")]
        weights: Vec<PathBuf>,
        /// Directory laid out like a dataset holding predicted REMs.
        #[arg(long, conflicts_with = "weights")]
        predictions: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        timing_runs: usize,
    },
    /// AP selection study from a scenario file (`--config`).
    Aso,
    /// Converts a PGM raster for figures.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        png: bool,
    },
    /// Re-runs the command recorded in a manifest and compares artifact hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Los { .. } => "los",
            Command::Train => "train",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::Aso => "aso",
            Command::Export { .. } => "export",
            Command::Replay { .. } => "replay",
        }
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<remforge::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    "error"
}

fn report_error(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REMFORGE_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            report_error("invalid_argument", &e.to_string());
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli, &argv) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

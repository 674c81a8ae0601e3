//! Command-line front end: ingest, train, ablate, and report.
//!
//! Exit codes: 0 on success, 2 on input or configuration errors, 3 when
//! training aborts.

mod cache;
mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use sagechain_core::error::Result;
use settings::Settings;

#[derive(Parser)]
#[command(
    name = "sagechain",
    version,
    about = "Multi-task classification of logistics transaction tables with a hybrid graph/sequence network"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset id: dataco, shipping, smart-logistics
    #[arg(long)]
    dataset: Option<String>,
    /// CSV file (or .ingest.bin cache); defaults to $SAGECHAIN_DATA_DIR/<dataset>.csv
    #[arg(long)]
    path: Option<PathBuf>,
    /// Task id declared for the dataset (e.g. traffic_status)
    #[arg(long)]
    task: Option<String>,
    /// Model variant: h-gsn, h-gatn, gsn, gatn
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Window size (graph node count)
    #[arg(long)]
    window: Option<usize>,
    /// Correlation threshold in [0, 1)
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long = "k-folds")]
    k_folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default sagechain-out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated graph layer counts for ablate (default 2,3,4,5)
    #[arg(long)]
    layers: Option<String>,
    /// Train folds in parallel with this many workers
    #[arg(long = "parallel-folds")]
    parallel_folds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, print its summary, and write the encoded cache
    Ingest(CommonArgs),
    /// Run the cross-validated experiment and write all artifacts
    Train(CommonArgs),
    /// Re-run the experiment across graph layer counts
    Ablate(CommonArgs),
    /// Pretty-print an existing report.json
    Report(CommonArgs),
}

fn build_settings(args: &CommonArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(config) = &args.config {
        s.load_file(config)?;
    }
    if let Some(v) = &args.dataset {
        s.apply("dataset", v)?;
    }
    if let Some(v) = &args.path {
        s.path = Some(v.clone());
    }
    if let Some(v) = &args.task {
        s.apply("task", v)?;
    }
    if let Some(v) = &args.variant {
        s.apply("variant", v)?;
    }
    if let Some(v) = args.epochs {
        s.epochs = Some(v);
    }
    if let Some(v) = args.window {
        s.window = Some(v);
    }
    if let Some(v) = args.threshold {
        s.threshold = Some(v);
    }
    if let Some(v) = args.k_folds {
        s.k_folds = Some(v);
    }
    if let Some(v) = args.seed {
        s.seed = Some(v);
    }
    if let Some(v) = &args.out {
        s.out = Some(v.clone());
    }
    if let Some(v) = &args.layers {
        s.layers_list = Some(settings::parse_layer_list(v)?);
    }
    if let Some(v) = args.parallel_folds {
        s.parallel_folds = Some(v);
    }
    Ok(s)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(args) => commands::cmd_ingest(&build_settings(args)?),
        Command::Train(args) => commands::cmd_train(&build_settings(args)?),
        Command::Ablate(args) => commands::cmd_ablate(&build_settings(args)?),
        Command::Report(args) => commands::cmd_report(&build_settings(args)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

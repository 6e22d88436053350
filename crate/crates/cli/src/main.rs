//! `daforest` command-line tool.

mod commands;
mod data;
mod error;
mod report;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::data::DataSpec;
use crate::error::{CliError, CliResult};
use crate::settings::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "daforest", version, about = "Boosted deep forest classifier")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "DAF_THREADS", value_name = "N")]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write it with a run report.
    Train(TrainArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Repeated train/test runs on one dataset.
    Evaluate(EvaluateArgs),
    /// Holdout accuracy as a function of the number of trees.
    Search(SearchArgs),
    /// Every variant on every dataset of a manifest.
    Benchmark(BenchmarkArgs),
    /// Friedman, Iman-Davenport and Wilcoxon tests on an accuracy matrix.
    Stats(StatsArgs),
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataSpec,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Hold out this fraction (stratified) for testing; 0 trains on all rows.
    #[arg(long, default_value_t = 0.0, value_name = "FRACTION")]
    pub test_fraction: f64,
    /// Model archive to write.
    #[arg(long, short = 'o', value_name = "FILE")]
    pub model: PathBuf,
    /// JSON run report.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    #[arg(long, short = 'm', value_name = "FILE")]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataSpec,
    /// The input has a label column: report accuracy and drop it from the features.
    #[arg(long)]
    pub with_labels: bool,
    /// Add one probability column per class.
    #[arg(long)]
    pub proba: bool,
    /// Output CSV (default: standard output).
    #[arg(long, short = 'o', value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataSpec,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 10, value_name = "R")]
    pub runs: usize,
    /// Run r uses seed BASE + r (default: the config seed).
    #[arg(long, value_name = "BASE")]
    pub base_seed: Option<u64>,
    #[arg(long, default_value_t = 0.3, value_name = "FRACTION")]
    pub test_fraction: f64,
    /// JSON report with every run.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KindChoice {
    Random,
    CompletelyRandom,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataSpec,
    /// Candidate tree counts LO:HI:STEP, or auto.
    #[arg(long, default_value = "auto", value_name = "RANGE")]
    pub range: String,
    #[arg(long, value_enum, default_value_t = KindChoice::Both)]
    pub kind: KindChoice,
    #[arg(long, default_value_t = 0, value_name = "SEED")]
    pub seed: u64,
    /// Fraction of rows held out for scoring.
    #[arg(long, default_value_t = 0.2, value_name = "FRACTION")]
    pub holdout: f64,
    /// Output CSV (default: standard output).
    #[arg(long, short = 'o', value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct BenchmarkArgs {
    /// TOML manifest listing datasets and variants.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Override the manifest's run count.
    #[arg(long, value_name = "R")]
    pub runs: Option<usize>,
    #[arg(long, value_name = "BASE")]
    pub base_seed: Option<u64>,
    #[arg(long, value_name = "FRACTION")]
    pub test_fraction: Option<f64>,
    /// Only these datasets (repeatable).
    #[arg(long = "dataset", value_name = "NAME")]
    pub datasets: Vec<String>,
    /// Only these variants (repeatable).
    #[arg(long = "variant", value_name = "NAME")]
    pub variants: Vec<String>,
    /// Directory for summary.csv, accuracy_matrix.csv and runs.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct StatsArgs {
    /// Accuracy matrix: rows are datasets, columns are classifiers.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Control classifier column (default: the first one).
    #[arg(long, value_name = "NAME")]
    pub control: Option<String>,
    #[arg(long, default_value_t = daforest::stats::ALPHA, value_name = "ALPHA")]
    pub alpha: f64,
    /// Zero differences: drop, pratt or zsplit.
    #[arg(long, default_value = "drop", value_name = "POLICY")]
    pub zero_policy: String,
    /// Continuity correction in the normal approximation.
    #[arg(long)]
    pub continuity: bool,
    /// Exact null distribution instead of the normal approximation.
    #[arg(long)]
    pub exact: bool,
    /// Also write the report as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Search(a) => commands::search(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
        Command::Stats(a) => commands::stats(&a),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

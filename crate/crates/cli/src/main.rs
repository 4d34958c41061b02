//! `neomtl`: synthesize, preprocess, train, cross-validate, search, attribute
//! and report on tabular multi-task data.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "neomtl",
    version,
    about = "Multi-task neural networks for tabular cohorts"
)]
struct Cli {
    /// Maximum number of folds or trials run concurrently.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Clean, impute and encode a raw CSV.
    Preprocess(PreprocessArgs),
    /// Train one model on all rows.
    Train(TrainArgs),
    /// K-fold cross-validation of one configuration.
    Cv(CvArgs),
    /// Cross-validated hyperparameter search.
    Gridsearch(GridArgs),
    /// Rank input features by gradient attribution.
    Attribute(AttributeArgs),
    /// Outcome distributions and cross-outcome summaries.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON describing every CSV column.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Drop columns whose missing fraction exceeds this.
    #[arg(long, default_value_t = 0.8)]
    max_missing_frac: f64,
    #[arg(long, default_value_t = 10)]
    mice_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    mice_tol: f64,
    /// Keep feature scales instead of z-scoring.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Hyperparameter JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Train a single-task model for this task only.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(2..))]
    folds: u32,
    #[arg(long)]
    seed: u64,
    /// Cross-validate the single-task model of this task only.
    #[arg(long)]
    task: Option<String>,
    /// Also cross-validate the architecture-matched single-task model of
    /// every task.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Search space JSON.
    #[arg(long)]
    space: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(2..))]
    folds: u32,
    /// Overrides the seed in the search space.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    InputGradient,
    FirstLayerCam,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    task: String,
    /// Output class to explain (classification tasks; default 1).
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, value_enum, default_value_t = Mode::InputGradient)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(usize::from(jobs))
            .build_global()
        {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

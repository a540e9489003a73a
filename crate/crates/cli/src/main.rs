//! `sasvr`: dataset generation, training, evaluation, benchmarking and the
//! motion-correction study.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PredictorKind;
use error::CliError;

#[derive(Parser)]
#[command(name = "sasvr", version, about = "Slice-to-volume rigid registration with slice attention")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset of (stack, reference) pairs from phantoms or a
    /// directory of reference volumes.
    Generate(GenerateArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint (or the oracle/identity predictor) on one split.
    Evaluate(EvalArgs),
    /// Time single-pair inference and count parameters.
    Bench(BenchArgs),
    /// Motion-correct a synthetic time series and compare voxel traces.
    MotionStudy(MotionArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// TOML or JSON file with any of the keys below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// desk | paper
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pairs per split: TRAIN,VAL,TEST.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Directory of `.nii`, `.nii.gz` or `.svr` reference volumes.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long)]
    pub spacing_override: Option<f64>,
    /// Subject split ratios: TRAIN,VAL,TEST.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Motion half-ranges: AX,AY,AZ (deg),TX,TY,TZ (mm).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub ranges: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Architecture preset: desk | paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// Train the baseline without the slice scorer.
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimizer steps; 0 writes the initial checkpoint only.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight of the angle MSE term.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Weight of the translation MSE term.
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub val_every: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// train | val | test
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorKind>,
    /// Shorthand for `--predictor oracle`.
    #[arg(long, conflicts_with_all = ["predictor", "identity"])]
    pub oracle: bool,
    /// Shorthand for `--predictor identity`.
    #[arg(long, conflicts_with = "predictor")]
    pub identity: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MotionArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorKind>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub subject_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub natural_motion: Option<f64>,
    #[arg(long)]
    pub drift_amplitude: Option<f64>,
    #[arg(long)]
    pub drift_period: Option<f64>,
    #[arg(long)]
    pub margin: Option<usize>,
    #[arg(long)]
    pub plots_per_roi: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::usage(format!("creating {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("writing {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a),
        Command::MotionStudy(a) => commands::motion_study(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}

//! Batch command-line front end: dataset generation, training, evaluation,
//! ablations and small utilities. Every command writes files and plain text;
//! nothing is interactive.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pointgr_core::autodiff::DType;
use pointgr_core::data::{DataError, Task};
use pointgr_core::graph::GraphError;
use pointgr_core::train::{parse_precision, AblationAxis, AblationMode, TrainError};

/// Environment variable selecting the engine precision (`f32` or `f64`).
pub const PRECISION_ENV: &str = "PGR_PRECISION";

#[derive(Debug, Parser)]
#[command(name = "pointgr", version, about = "Graph residual networks for point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (PGRC samples plus manifest.txt)
    GenData(GenDataArgs),
    /// Train a model and write metrics.csv plus the best checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset
    Eval(EvalArgs),
    /// Print the trainable parameter count of a default model
    Params(ParamsArgs),
    /// Score classifiers across neighbor counts or point counts
    Ablate(AblateArgs),
    /// Time one kNN graph construction
    KnnBench(KnnBenchArgs),
    /// Print the header of a PGRC sample file
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Partseg,
    Sceneseg,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Classification => Task::Classification,
            TaskArg::Partseg => Task::PartSeg,
            TaskArg::Sceneseg => Task::SceneSeg,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Learning task
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per sample [default: 1024, 2048 or 4096 by task]
    #[arg(long)]
    pub points: Option<usize>,
    /// Samples per class (classification) or per category (partseg)
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Rooms to generate (sceneseg)
    #[arg(long, default_value_t = 4)]
    pub rooms: usize,
    /// Surface points per square metre (sceneseg)
    #[arg(long, default_value_t = 100.0)]
    pub density: f64,
    /// Fraction of samples (or rooms) tagged `test`
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Learning task
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Training config of `key = value` lines [default: task defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for metrics.csv and the checkpoint
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split to score
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// JSON report path [default: <checkpoint>/eval_<split>.json]
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Clouds per forward pass
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Seed for resampling clouds to the model's point count
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Learning task
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Output classes (total part count for partseg)
    #[arg(long)]
    pub classes: usize,
    /// Object categories (partseg only)
    #[arg(long, default_value_t = 16)]
    pub categories: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Swept setting: k or points
    #[arg(long, value_parser = parse_axis)]
    pub axis: AblationAxis,
    /// retrain: one run per value; evaluate: one run at the config's setting, scored at every value
    #[arg(long, value_parser = parse_mode, default_value = "retrain")]
    pub mode: AblationMode,
    /// Comma-separated values, e.g. 5,10,20,40
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// CSV output path
    #[arg(long, default_value = "ablation.csv")]
    pub out: PathBuf,
    /// Directory for per-run artifacts [default: <out> with a `.runs` suffix]
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// Classification manifest [default: a generated synthetic dataset]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Training config of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the generated dataset
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples per class of the generated dataset
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Points per sample of the generated dataset
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    /// Test fraction of the generated dataset
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

fn parse_axis(s: &str) -> Result<AblationAxis, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<AblationMode, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KnnMethod {
    Brute,
    Indexed,
}

#[derive(Debug, Args)]
pub struct KnnBenchArgs {
    /// Number of uniform random points in the unit cube
    #[arg(long)]
    pub n: usize,
    /// Neighbors per point, self included
    #[arg(long)]
    pub k: usize,
    /// Search strategy
    #[arg(long, value_enum)]
    pub method: KnnMethod,
    /// Point generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Timed repetitions; the fastest is reported
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// PGRC sample file
    #[arg(long)]
    pub sample: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn file(path: &std::path::Path, msg: impl ToString) -> Self {
        CliError::File {
            path: path.display().to_string(),
            msg: msg.to_string(),
        }
    }
}

/// Precision named by `PGR_PRECISION`, if set.
pub fn env_precision() -> Result<Option<DType>, CliError> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) => parse_precision(v.trim())
            .map(Some)
            .map_err(|m| CliError::Invalid(format!("{PRECISION_ENV}: {m}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Invalid(format!("{PRECISION_ENV}: {e}"))),
    }
}

/// Parse `args` (program name first) and run the command. Returns the
/// process exit code: 0 on success, 1 when the command fails, 2 on a usage
/// error.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return e.exit_code();
        }
    };
    match commands::execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

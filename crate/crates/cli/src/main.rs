mod commands;
mod data_options;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// Similarity distillation of vessel segmentation networks.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 data,
/// checkpoint or file error, 4 numeric failure.
#[derive(Parser, Debug)]
#[command(name = "vesseldistill", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic angiogram corpus
    GenData(GenDataArgs),
    /// Train the teacher network with cross-entropy
    TrainTeacher(TrainArgs),
    /// Train a student network with cross-entropy only
    TrainScratch(TrainArgs),
    /// Distill a trained teacher into a student
    Distill(DistillArgs),
    /// Evaluate a checkpoint and write metrics.csv and overlays
    Eval(EvalArgs),
    /// Merge metrics.csv files into a comparison table
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Plain-text `key = value` file. Flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Must be absent or empty unless --force is given.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Reuse a non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// Override any config key, e.g. `--set w_asd=0.5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug, Clone)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of parent images
    #[arg(long)]
    pub n_images: Option<usize>,
    /// `full` (992 px canvases, 4×4 grids of 256 px) or `desk` (128 px, 2×2 of 64 px)
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus directory written by gen-data
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Student variant: student_mobile, student_erfnet or student_enet
    #[arg(long)]
    pub student: Option<String>,
    /// `full` or `tiny` network widths
    #[arg(long)]
    pub preset: Option<String>,
    /// `f32` or `f64`
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct DistillArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint written by train-teacher
    #[arg(long, value_name = "FILE")]
    pub teacher_ckpt: Option<PathBuf>,
    /// `distill` (FSD+ASD), `fsd_only` or `softkd`
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Which corpus split to score
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub threshold: Option<String>,
    /// Number of overlay images to write
    #[arg(long, default_value_t = 8)]
    pub overlays: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// metrics.csv files written by eval
    #[arg(required = true, value_name = "METRICS_CSV")]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(vesseldistill::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        use vesseldistill::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(e) => match e {
                E::Config(_) | E::Argument(_) => EXIT_USAGE,
                E::Data(_) | E::Io { .. } | E::Corrupt(_) | E::Incompatible(_) | E::Shape(_) => EXIT_DATA,
                E::Numeric(_) | E::Degenerate { .. } | E::Engine(_) => EXIT_NUMERIC,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<vesseldistill::Error> for CliError {
    fn from(e: vesseldistill::Error) -> Self {
        CliError::Lib(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a, &argv),
        Command::TrainTeacher(a) => commands::train(commands::TrainKind::Teacher, &a, None, None, &argv),
        Command::TrainScratch(a) => commands::train(commands::TrainKind::Scratch, &a, None, None, &argv),
        Command::Distill(a) => commands::train(
            commands::TrainKind::Distill,
            &a.train,
            a.teacher_ckpt.as_deref(),
            a.mode.as_deref(),
            &argv,
        ),
        Command::Eval(a) => commands::eval(&a, &argv),
        Command::Report(a) => commands::report(&a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vesseldistill: {e}");
            ExitCode::from(e.code())
        }
    }
}

mod commands;
mod report;
mod run_dir;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Train, evaluate and analyze transformers on in-context polynomial regression.
#[derive(Debug, Parser)]
#[command(name = "icl-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one test distribution.
    Eval(EvalArgs),
    /// Evaluate a checkpoint over a range of test widths.
    Sweep(SweepArgs),
    /// Write analysis.json for a checkpoint.
    Analyze(AnalyzeArgs),
    /// Collate sweep.csv files into a markdown table.
    Report(ReportArgs),
    /// Run the numerical oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VaryArg {
    Inputs,
    Coefficients,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Eps,
    REps,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON) or a MANIFEST from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; overrides `out_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; wins over ICL_LAB_SEED and the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scalar type used for training.
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub no_ln: bool,
    #[arg(long)]
    pub no_mlp: bool,
    #[arg(long)]
    pub no_residual: bool,
    /// Degree set, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    pub degrees: Option<Vec<usize>>,
    /// Training regime: T, T1, T2, gap or curriculum-degree.
    #[arg(long)]
    pub regime: Option<String>,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Checkpoint path, or a name inside `<run>/checkpoints/`.
    #[arg(long, default_value = "final")]
    pub ckpt: String,
    /// Run directory used to resolve `--ckpt` and default outputs.
    #[arg(long, default_value = ".")]
    pub run: PathBuf,
    /// Test specification (JSON); missing fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_functions: Option<usize>,
    #[arg(long)]
    pub n_batches: Option<usize>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    /// Which test distribution the width applies to.
    #[arg(long, value_enum, default_value = "coefficients")]
    pub vary: VaryArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub test: TestArgs,
    /// Width of the varied test distribution.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub test: TestArgs,
    /// Widths: `1..10` (integers, inclusive), `1,2,5` or a single value.
    #[arg(long, default_value = "1..10")]
    pub sigma: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, default_value = "final")]
    pub ckpt: String,
    #[arg(long, default_value = ".")]
    pub run: PathBuf,
    /// Analysis specification (JSON); missing fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, each holding a sweep.csv.
    #[arg(long, value_delimiter = ',', required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "eps")]
    pub metric: Metric,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A problem with the command line, a config file or its schema.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Shorthand for returning a [`UsageError`].
pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<icl_core::Error>(),
                Some(icl_core::Error::InvalidConfig(_) | icl_core::Error::Regime(_))
            )
    });
    if config {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Report(a) => report::run(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

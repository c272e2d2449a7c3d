//! `minerva`: generate benchmark data, select features, evaluate subsets and
//! collate reports.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 I/O error,
//! 3 training failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minerva_core::report::Method;
use minerva_core::{Error, WeightUpdate};

use config::{parse_float_list, parse_index_list, parse_seeds, Experiment};

// Aliases keep clap from treating these as repeated single values.
type IndexList = Vec<usize>;
type FloatList = Vec<f64>;
type SeedList = Vec<u64>;

#[derive(Parser, Debug)]
#[command(name = "minerva", version, about = "Mutual-information feature selection")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (CSV plus sidecar JSON).
    Generate(GenerateArgs),
    /// Select features with MINERVA or the KSG filter.
    Select(SelectArgs),
    /// k-NN regression R² of a feature subset.
    Evaluate(EvaluateArgs),
    /// Collate selection reports into one table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k0: Option<usize>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    /// Sine-branch feature indices, comma separated.
    #[arg(long, value_parser = parse_index_list)]
    pub j: Option<IndexList>,
    /// Cosine-branch feature indices, comma separated.
    #[arg(long, value_parser = parse_index_list)]
    pub i: Option<IndexList>,
    #[arg(long, value_parser = parse_float_list)]
    pub alpha: Option<FloatList>,
    #[arg(long, value_parser = parse_float_list)]
    pub beta: Option<FloatList>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// File stem; defaults to `exp_<a|b>_seed<seed>`.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct SelectArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sidecar JSON; defaults to the CSV path with a .json extension.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// `0..9` (inclusive) or a comma list; runs concurrently.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    /// Report file, or a directory when several seeds run.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_learning_rate: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub drift_target: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stage1_max_steps: Option<usize>,
    #[arg(long)]
    pub stage2_max_steps: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub weight_update: Option<WeightUpdateArg>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub residual_blocks: Option<usize>,
    /// KSG neighbour count.
    #[arg(long)]
    pub k: Option<usize>,
    /// KSG selection threshold in nats.
    #[arg(long)]
    pub ksg_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Minerva,
    Ksg,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Minerva => Method::Minerva,
            MethodArg::Ksg => Method::Ksg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum WeightUpdateArg {
    Gradient,
    Proximal,
}

impl From<WeightUpdateArg> for WeightUpdate {
    fn from(w: WeightUpdateArg) -> Self {
        match w {
            WeightUpdateArg::Gradient => WeightUpdate::Gradient,
            WeightUpdateArg::Proximal => WeightUpdate::Proximal,
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// One-based feature indices, comma separated.
    #[arg(long, value_parser = parse_index_list, conflicts_with = "selection_report")]
    pub selected: Option<IndexList>,
    /// Use the selection recorded in this report.
    #[arg(long)]
    pub selection_report: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ReportArgs {
    /// Selection report files.
    #[arg(num_args = 0..)]
    pub inputs: Vec<PathBuf>,
    /// Output stem; writes `<stem>.csv` and `<stem>.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 2,
        Error::Training { .. } | Error::DegenerateWeights { .. } | Error::Numeric { .. } | Error::Grad(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Generate(a) => commands::generate(file.generate, a),
        Command::Select(a) => commands::select(file.select, a),
        Command::Evaluate(a) => commands::evaluate(file.evaluate, a),
        Command::Report(a) => commands::report(file.report, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

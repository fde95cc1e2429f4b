mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
    Threshold(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
            Self::Threshold(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Threshold(m) => f.write_str(m),
            Self::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<supnotmiwae::Error> for CliError {
    fn from(e: supnotmiwae::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "supnotmiwae", version, about = "Generative classification of time series with MNAR missing values")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON file of flat dotted keys overriding the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImputeMode {
    Model,
    Mean,
    Forward,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    None,
    NoObsdropout,
    NoMnar,
    NoSupervision,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with train/val/test splits.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated (or compatible) dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.csv and val.csv.
        #[arg(long)]
        data: PathBuf,
        /// ours, ours-no-obsdropout, ours-no-mnar, ours-no-supervision,
        /// gru-zero, gru-mean, gru-forward, gru-simple or gru-d.
        #[arg(long, default_value = "ours")]
        model: String,
        #[arg(long)]
        out: PathBuf,
        /// ObsDropout rate during training.
        #[arg(long)]
        beta: Option<f64>,
        /// ObsDropout rate at prediction (defaults to the training rate).
        #[arg(long)]
        test_beta: Option<f64>,
        /// Importance particles per series during training.
        #[arg(short = 'K', long = "k")]
        k: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a labeled split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// CSV file name inside the data directory.
        #[arg(long, default_value = "test.csv")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        test_beta: Option<f64>,
        /// Importance particles per outer sample.
        #[arg(short = 'K', long = "k")]
        k: Option<usize>,
        /// Outer samples averaged per series.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Fill missing cells with the model or a heuristic.
    Impute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test.csv")]
        split: String,
        /// Required in model mode; elsewhere only supplies statistics.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        mode: ImputeMode,
        /// Fraction of observed cells hidden for scoring (0 disables).
        #[arg(long)]
        holdout_rate: Option<f64>,
        /// Particles per series in model mode.
        #[arg(short = 'K', long = "k")]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the objective's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "none")]
        ablation: AblationArg,
        /// Entries probed per parameter tensor.
        #[arg(long, default_value_t = 8)]
        per_tensor: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common, out } => commands::generate(&common, &out),
        Command::Train {
            common,
            data,
            model,
            out,
            beta,
            test_beta,
            k,
            max_epochs,
            precision,
            resume,
        } => commands::train(
            &common,
            &commands::TrainArgs {
                data,
                model,
                out,
                beta,
                test_beta,
                k,
                max_epochs,
                precision,
                resume,
            },
        ),
        Command::Evaluate {
            common,
            checkpoint,
            data,
            split,
            out,
            test_beta,
            k,
            samples,
        } => commands::evaluate(
            &common,
            &commands::EvaluateArgs {
                checkpoint,
                data,
                split,
                out,
                test_beta,
                k,
                samples,
            },
        ),
        Command::Impute {
            common,
            data,
            split,
            checkpoint,
            mode,
            holdout_rate,
            k,
            out,
        } => commands::impute(
            &common,
            &commands::ImputeArgs {
                data,
                split,
                checkpoint,
                mode,
                holdout_rate,
                k,
                out,
            },
        ),
        Command::Gradcheck {
            common,
            ablation,
            per_tensor,
            out,
        } => commands::gradcheck(&common, ablation, per_tensor, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

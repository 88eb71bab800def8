//! `botstoi` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 failure of an external tool.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

/// Error the user can fix by changing flags or the config file.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(
    name = "botstoi",
    version,
    about = "Degrade speech, label it with STOI and train a non-intrusive predictor"
)]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for corruption, labelling, features and fold training.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic clean speech, a noise bank and an RIR bank.
    Synth(SynthArgs),
    /// Report long-term and WADA SNR of clean files.
    Screen(ScreenArgs),
    /// Degrade a clean directory into a labelled corpus.
    Corrupt(CorruptArgs),
    /// Label existing clean/degraded pairs.
    Label(LabelArgs),
    /// Extract model input features for every labelled record.
    Features(FeaturesArgs),
    /// Cross-validate the predictor and save one checkpoint per fold.
    Train(TrainArgs),
    /// Score WAV or feature files with a checkpoint.
    Predict(PredictArgs),
    /// Evaluate the fold checkpoints of a training run.
    Evaluate(EvaluateArgs),
    /// Print a saved evaluation report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Total clean speech to generate.
    #[arg(long, default_value_t = 5.0)]
    minutes: f64,
    #[arg(long, default_value_t = 4)]
    rirs: usize,
}

#[derive(Args, Debug)]
struct ScreenArgs {
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    longterm_db: Option<f64>,
    #[arg(long)]
    wada_db: Option<f64>,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Noise bank directory, one subdirectory per category.
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long)]
    rirs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    variants: Option<usize>,
    /// Drop clean files failing the SNR screen.
    #[arg(long)]
    screen: bool,
    /// Use this SNR for every additive noise step.
    #[arg(long, allow_negative_numbers = true)]
    forced_snr: Option<f64>,
    /// Comma-separated degradation kinds to enable.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// Put additive noise in every chain.
    #[arg(long)]
    additive_always: bool,
}

#[derive(Args, Debug)]
struct LabelArgs {
    /// Tab-separated `clean<TAB>degraded` paths, one pair per line.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// ps1, ps2_input, ps3_input, w2v2 or hubert.
    #[arg(long)]
    kind: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `.wav` or `.bsft` files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Report directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
    Scatter,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `report.json` written by `evaluate`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Usage("--jobs must be at least 1".into()).into());
        }
        config.jobs = j;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(&config, a),
        Command::Screen(a) => commands::screen(config, a),
        Command::Corrupt(a) => commands::corrupt(config, a),
        Command::Label(a) => commands::label(&config, a),
        Command::Features(a) => commands::features(config, a),
        Command::Train(a) => commands::train(config, a),
        Command::Predict(a) => commands::predict(&config, a),
        Command::Evaluate(a) => commands::evaluate(config, a),
        Command::Report(a) => commands::report(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<Usage>()) {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<botstoi::Error>()) {
        Some(e) if e.is_external() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

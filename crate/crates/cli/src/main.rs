//! `acton`: batch front end for synthesis, embedding, training and
//! evaluation.

mod cmd;
mod failure;
mod manifest;
mod settings;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "acton",
    version,
    about = "Activity time-series embeddings and disorder classifiers"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON settings file (or a run manifest); explicit flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads; above 1, embedding training runs without the
    /// determinism guarantee unless --deterministic is also given
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub threads: usize,
    /// Force the single-writer training path (the default)
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// More log output; repeat for more
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

impl Global {
    /// Threads for embedding training.
    pub fn embed_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort (activity.csv, labels.csv)
    Synth(cmd::synth::SynthArgs),
    /// Build the symbol vocabulary of activity files
    Vocab(cmd::embed::VocabArgs),
    /// Learn embeddings at one granularity
    TrainEmbed(cmd::embed::TrainEmbedArgs),
    /// Write per-subject feature vectors from an embedding space
    Features(cmd::embed::FeaturesArgs),
    /// Logistic-regression probe on feature vectors
    TrainLinear(cmd::linear::TrainLinearArgs),
    /// Convolutional classifier for one task
    TrainCnn(cmd::cnn::TrainCnnArgs),
    /// Convolutional classifier with one head per task
    TrainMulti(cmd::cnn::TrainMultiArgs),
    /// Predict with a trained model
    Infer(cmd::infer::InferArgs),
    /// Score prediction files against labels
    Eval(cmd::eval::EvalArgs),
    /// Compare analytic and numeric gradients on random instances
    Gradcheck(cmd::gradcheck::GradcheckArgs),
    /// Dump embeddings or model tensors in plain formats
    Export(cmd::export::ExportArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads.max(1))
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let g = &cli.global;
    match cli.command {
        Command::Synth(a) => cmd::synth::run(g, a),
        Command::Vocab(a) => cmd::embed::vocab(g, a),
        Command::TrainEmbed(a) => cmd::embed::train_embed(g, a),
        Command::Features(a) => cmd::embed::features(g, a),
        Command::TrainLinear(a) => cmd::linear::run(g, a),
        Command::TrainCnn(a) => cmd::cnn::train_cnn(g, a),
        Command::TrainMulti(a) => cmd::cnn::train_multi(g, a),
        Command::Infer(a) => cmd::infer::run(g, a),
        Command::Eval(a) => cmd::eval::run(g, a),
        Command::Gradcheck(a) => cmd::gradcheck::run(g, a),
        Command::Export(a) => cmd::export::run(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{}", e.render());
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("ERROR 1: {first}");
            eprint!("{}", text);
            return ExitCode::from(1);
        }
    };
    let level = match cli.global.verbose {
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
            eprintln!("ERROR {}: {e}", e.code());
            ExitCode::from(e.code())
        }
    }
}

mod commands;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "voxprofile", version, about = "Semi-supervised speaker profiling from raw audio")]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic toy corpus.
    Synth(SynthArgs),
    /// Train a model; writes a checkpoint and a loss log.
    Train(TrainArgs),
    /// Grouped RMSE/MAE/accuracy of a checkpoint on a labeled manifest.
    Evaluate(EvalArgs),
    /// Export latent codes for every utterance of a manifest.
    Embed(EmbedArgs),
    /// Finite-difference check of every loss path on a reduced model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    speakers: usize,
    #[arg(long, default_value_t = 5)]
    utts: usize,
    /// Samples per utterance at 16 kHz.
    #[arg(long, default_value_t = 16000)]
    samples: usize,
    /// Noise standard deviation relative to the signal RMS.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value = "spk")]
    prefix: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled or unlabeled manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Coordinates sampled per parameter array.
    #[arg(long, default_value_t = 4)]
    samples: usize,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    latent: usize,
    #[arg(long, default_value_t = 16000)]
    input_len: usize,
    /// Supervised rows and triplets in the checked batch.
    #[arg(long, default_value_t = 2)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot configure thread pool: {e}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Embed(a) => commands::embed(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

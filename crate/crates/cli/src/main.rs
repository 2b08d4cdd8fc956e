//! `cellprop`: synthesize data, train the centroid detector, segment cells
//! and score the results.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellprop", version, about = "Weakly supervised cell instance segmentation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train the centroid-likelihood network.
    Train(TrainArgs),
    /// Segment one image with a trained model.
    Segment(SegmentArgs),
    /// Score predicted labelings against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene spec file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Network config file (`key = value` lines); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of images with `<stem>.csv` centroid annotations.
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian width of the likelihood targets, pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Likelihood threshold for centre regions.
    #[arg(long, default_value_t = cellprop::peaks::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Data-term weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Pairwise-term weight.
    #[arg(long, default_value_t = 50.0)]
    pub beta: f64,
    /// `phase-contrast` (inverted image as saliency) or `direct`.
    #[arg(long, default_value = "phase-contrast")]
    pub modality: String,
    /// Accepted for a uniform interface; segmentation uses no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of predicted `*_labels.png`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth `*_labels.png` (and optional `<stem>.csv`).
    #[arg(long)]
    pub truth: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Detection matching radius, pixels.
    #[arg(long, default_value_t = 5.0)]
    pub radius: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Segment(a) => commands::segment(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

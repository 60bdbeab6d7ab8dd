//! `msfs` — command-line driver for the multi-scale frame-synthesis toolkit.
//!
//! Subcommands: `datagen` (synthetic corpus), `train` (pretrain + optional
//! adversarial phase), `synth` (frames at arbitrary time ratios from two
//! images), `eval` (checkpoint or baseline metrics over a corpus).
//!
//! Configuration merges defaults, a `--config` file of `key = value` lines,
//! `MSFS_<KEY>` environment variables, and flags — later sources win. Every
//! run echoes its effective configuration into the output directory.
//!
//! Exit codes: 0 success, 2 validation error, 3 runtime divergence/abort.

mod commands;
mod layering;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "msfs", version, about = "Multi-scale video frame synthesis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic moving-square video corpus.
    Datagen(DatagenArgs),
    /// Train a frame-synthesis model on a corpus.
    Train(TrainArgs),
    /// Synthesize frames between or beyond two input images.
    Synth(SynthArgs),
    /// Evaluate a checkpoint or a baseline predictor over a corpus.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct DatagenArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: timestamped under runs/).
    #[arg(long)]
    pub out: Option<String>,
    /// Number of videos.
    #[arg(long)]
    pub videos: Option<String>,
    /// Frames per video.
    #[arg(long)]
    pub frames: Option<String>,
    /// Frame edge length in pixels; must be a multiple of 8.
    #[arg(long)]
    pub size: Option<String>,
    /// Master RNG seed.
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory produced by `datagen`.
    #[arg(long)]
    pub corpus: Option<String>,
    /// Output directory (default: timestamped under runs/).
    #[arg(long)]
    pub out: Option<String>,
    /// Pyramid levels S.
    #[arg(long)]
    pub levels: Option<String>,
    /// Residual blocks per sub-network D.
    #[arg(long)]
    pub blocks: Option<String>,
    /// Generator trunk width.
    #[arg(long)]
    pub filters: Option<String>,
    /// Generator kernel size (odd).
    #[arg(long)]
    pub kernel: Option<String>,
    /// Critic convolution layers.
    #[arg(long)]
    pub d_layers: Option<String>,
    /// Critic base width.
    #[arg(long)]
    pub d_filters: Option<String>,
    /// Critic kernel size (odd).
    #[arg(long)]
    pub d_kernel: Option<String>,
    /// Triplets per step.
    #[arg(long)]
    pub batch: Option<String>,
    /// Square crop size per sample.
    #[arg(long)]
    pub patch: Option<String>,
    /// Optimizer steps per epoch.
    #[arg(long)]
    pub iters_per_epoch: Option<String>,
    /// Generator-only warm-up epochs.
    #[arg(long)]
    pub epochs_pretrain: Option<String>,
    /// Adversarial epochs (ignored when --adversarial false).
    #[arg(long)]
    pub epochs_adv: Option<String>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<String>,
    /// Adversarial-phase learning-rate decay factor.
    #[arg(long)]
    pub decay_factor: Option<String>,
    /// Epochs between learning-rate decays.
    #[arg(long)]
    pub decay_every: Option<String>,
    /// Consistency arm: predicted|observed|off|tv|weighted_tv.
    #[arg(long)]
    pub variant: Option<String>,
    /// false = generator-only training (no critic phase).
    #[arg(long)]
    pub adversarial: Option<String>,
    /// Training RNG seed.
    #[arg(long)]
    pub seed: Option<String>,
    /// Largest frame spacing when sampling triplets.
    #[arg(long)]
    pub max_gap: Option<String>,
    /// Fraction of videos held out for validation.
    #[arg(long)]
    pub val_fraction: Option<String>,
    /// Epochs between validation curve rows.
    #[arg(long)]
    pub eval_every: Option<String>,
    /// Additive Gaussian noise sigma during augmentation.
    #[arg(long)]
    pub noise_sigma: Option<String>,
    /// Smooth-patch rejection threshold.
    #[arg(long)]
    pub variance_threshold: Option<String>,
    /// Random flips and quarter turns during augmentation.
    #[arg(long)]
    pub augment: Option<String>,
    /// Feature-loss weight.
    #[arg(long)]
    pub lambda_feat: Option<String>,
    /// Adversarial-loss weight.
    #[arg(long)]
    pub lambda_gan: Option<String>,
    /// Consistency-loss weight.
    #[arg(long)]
    pub lambda_tran: Option<String>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// First input image (time 0).
    #[arg(long)]
    pub first: Option<String>,
    /// Second input image (time 1).
    #[arg(long)]
    pub second: Option<String>,
    /// Comma-separated time ratios; < 0 or > 1 extrapolates.
    #[arg(long)]
    pub ratios: Option<String>,
    /// Override pyramid depth at synthesis time.
    #[arg(long)]
    pub levels: Option<String>,
    /// Output directory (default: timestamped under runs/).
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint file (omit when --oracle is used).
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Corpus directory produced by `datagen`.
    #[arg(long)]
    pub corpus: Option<String>,
    /// Dataset label in the report (default: corpus directory name).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Comma-separated midpoint-to-input intervals.
    #[arg(long)]
    pub intervals: Option<String>,
    /// Comma-separated pyramid depths to sweep (default: checkpoint depth).
    #[arg(long)]
    pub levels: Option<String>,
    /// Time ratio of the synthesized frame.
    #[arg(long)]
    pub ratio: Option<String>,
    /// Baseline predictor instead of a model:
    /// average|nearest|identity|ground_truth.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Output directory (default: timestamped under runs/).
    #[arg(long)]
    pub out: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Datagen(args) => commands::cmd_datagen(args),
        Cmd::Train(args) => commands::cmd_train(args),
        Cmd::Synth(args) => commands::cmd_synth(args),
        Cmd::Eval(args) => commands::cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error());
            ExitCode::from(e.code())
        }
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Synthetic weak-label segmentation experiments: data generation, training,
/// evaluation and checks.
#[derive(Debug, Parser)]
#[command(name = "crispdec", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with corrupted seed labels.
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and write a metrics CSV.
    Eval(EvalArgs),
    /// Run every finite-difference gradient check.
    Gradcheck(GradcheckArgs),
    /// Score a directory of predicted masks against ground truth.
    Metrics(MetricsArgs),
    /// Run the ablation benchmark over presets and seeds.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Number of classes including background.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// key=value file overriding any of the above and the corruption settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long, required_unless_present = "replay")]
    pub data: Option<PathBuf>,
    /// Run directory; receives the manifest, logs and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from a named ablation preset instead of the full model.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Replace dynamic fusion by concatenation and a 1×1 convolution.
    #[arg(long)]
    pub no_dmf: bool,
    /// Drop the variance head, heteroscedastic loss, weighting and refiner.
    #[arg(long)]
    pub no_ugr: bool,
    /// Keep the variance head but drop the gated refiner.
    #[arg(long)]
    pub no_refiner: bool,
    /// Drop the boundary head and its losses.
    #[arg(long)]
    pub no_bnd: bool,
    /// Drop uncertainty modulation of the fusion scores.
    #[arg(long)]
    pub no_udmf: bool,
    /// Drop the EMA teacher and relabeling.
    #[arg(long)]
    pub no_ema: bool,
    /// key=value training configuration; its values override flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace an existing run directory.
    #[arg(long)]
    pub force: bool,
    /// Repeat the run described by a run manifest: same data, same
    /// configuration. Excludes every configuration flag.
    #[arg(long, conflicts_with_all = [
        "data", "preset", "epochs", "seed", "lr", "batch_size", "no_dmf", "no_ugr",
        "no_refiner", "no_bnd", "no_udmf", "no_ema", "config",
    ])]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for predicted label maps (PGM).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Directory for per-image confidence and uncertainty maps (CTSR).
    #[arg(long)]
    pub dump_confidence: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Also run a suite whose gradient is wrong on purpose.
    #[arg(long, hide = true)]
    pub include_broken: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory of predicted PGM masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth PGM masks with matching names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Number of classes.
    #[arg(long)]
    pub classes: usize,
    /// Directory of `<name>.ctsr` confidence maps for ECE.
    #[arg(long)]
    pub confidence: Option<PathBuf>,
    /// CSV output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated presets.
    #[arg(long, default_value = "A0,A1,A4,A6,U0")]
    pub presets: String,
    /// Comma-separated initialisation seeds.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    /// Minimum A6 − A0 mIoU gain.
    #[arg(long, default_value_t = 0.02)]
    pub min_gain: f64,
    /// Write per-run and mean scores as key=value text.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

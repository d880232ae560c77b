use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "sevs",
    version,
    about = "Stacking-ensemble video summarization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset in the on-disk format.
    Generate(GenerateArgs),
    /// Load a dataset and report its shape.
    Validate(ValidateArgs),
    /// Train one model per split.
    Train(TrainCmd),
    /// Summarize every video of a dataset with one checkpoint.
    Summarize(SummarizeCmd),
    /// Evaluate per-split checkpoints and report F-scores.
    Evaluate(EvaluateCmd),
    /// Train and evaluate the four ablation rows.
    Ablate(AblateCmd),
    /// F-score and inference time across NMS thresholds.
    SweepNms(SweepCmd),
    /// Per-frame score curves of one video as CSV.
    PlotData(PlotCmd),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub videos: usize,
    #[arg(long, default_value_t = 40)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 80)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, env = "SEVS_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Manifest path, dataset directory, `synth` or `synth:<seed>`.
    #[arg(long)]
    pub data: String,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Manifest path, dataset directory, `synth` or `synth:<seed>`.
    #[arg(long)]
    pub data: String,
    /// Extra datasets for the augmented and transfer settings.
    #[arg(long, value_delimiter = ',')]
    pub extras: Vec<String>,
    #[arg(long, default_value = "canonical")]
    pub setting: String,
    /// Split index or `all`.
    #[arg(long, default_value = "all")]
    pub split: String,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// JSON training config; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    /// segments-only, frames-only, average or meta.
    #[arg(long)]
    pub fusion: Option<String>,
    /// Comma list of cls, reg, pre, mse, or `all`.
    #[arg(long)]
    pub loss_toggles: Option<String>,
    #[arg(long, env = "SEVS_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fusion_grad_flow: bool,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Narrow layer widths (fast, for experiments).
    #[arg(long)]
    pub tiny: bool,
}

#[derive(Debug, Args, Clone)]
pub struct SummaryArgs {
    #[arg(long, default_value_t = 0.15)]
    pub budget: f64,
    /// average or maximum; defaults by dataset.
    #[arg(long)]
    pub fscore_mode: Option<String>,
    /// Use annotated shot boundaries when present instead of segmentation.
    #[arg(long)]
    pub annotated_shots: bool,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeCmd {
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub summary: SummaryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub summary: SummaryArgs,
    /// Directory holding `split_<i>.ckpt` files from `train`.
    #[arg(long, required_unless_present = "train_first")]
    pub checkpoint: Option<PathBuf>,
    /// Train the split models before evaluating.
    #[arg(long)]
    pub train_first: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[arg(long)]
    pub data: String,
    #[arg(long, value_delimiter = ',')]
    pub extras: Vec<String>,
    /// One grid column per setting.
    #[arg(long, value_delimiter = ',', default_value = "canonical")]
    pub setting: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub summary: SummaryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5,0.6,0.7")]
    pub thresholds: Vec<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub summary: SummaryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotCmd {
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub video: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

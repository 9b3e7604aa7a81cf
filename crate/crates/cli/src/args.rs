use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "vpf",
    version,
    about = "Vehicle-conditioned pedestrian pose forecasting",
    long_about = "Generate synthetic scenes, segment them, train and evaluate the forecaster.\n\n\
                  Every subcommand accepts --config FILE with `key = value` lines named after its long \
                  flags; flags on the command line take precedence. VPF_THREADS caps worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene corpus (scenes.jsonl + manifest.json).
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Cut scenes into windows with pedestrian groups and nearby vehicles.
    #[command(args_override_self = true)]
    Segment(SegmentArgs),
    /// Print segment counts per (pedestrians, vehicles) category.
    #[command(args_override_self = true)]
    Stats(StatsArgs),
    /// Train a forecaster on the training split.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Report per-category, per-horizon errors of one or more checkpoints.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Write predicted poses as JSONL.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Finite-difference check of every primitive and the full model.
    #[command(args_override_self = true)]
    Gradcheck(GradcheckArgs),
    /// Draw top-down SVG plots of segments.
    #[command(args_override_self = true)]
    Plot(PlotArgs),
}

impl Command {
    pub fn config(&self) -> Option<&PathBuf> {
        match self {
            Command::Synth(a) => a.common.config.as_ref(),
            Command::Segment(a) => a.common.config.as_ref(),
            Command::Stats(a) => a.common.config.as_ref(),
            Command::Train(a) => a.common.config.as_ref(),
            Command::Eval(a) => a.common.config.as_ref(),
            Command::Predict(a) => a.common.config.as_ref(),
            Command::Gradcheck(a) => a.common.config.as_ref(),
            Command::Plot(a) => a.common.config.as_ref(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Key-value file supplying defaults for any long flag.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BehaviorArg {
    Mixed,
    Cross,
    Yield,
    WalkAlong,
    Stand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of scenes.
    #[arg(long, default_value_t = 100)]
    pub scenes: usize,
    /// Pedestrians per scene (1-3); drawn per scene when omitted.
    #[arg(long)]
    pub n_ped: Option<usize>,
    /// Vehicles per scene (0-4); drawn from 1-4 per scene when omitted.
    #[arg(long)]
    pub n_veh: Option<usize>,
    /// Frames per scene.
    #[arg(long, default_value_t = 150)]
    pub frames: usize,
    /// Last frame before a yield decision takes effect (default: frames - 26).
    #[arg(long)]
    pub decision_frame: Option<usize>,
    #[arg(long, value_enum, default_value_t = BehaviorArg::Mixed)]
    pub behavior: BehaviorArg,
    /// Per-joint position noise, meters.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus directory or scenes.jsonl.
    #[arg(long)]
    pub input: PathBuf,
    /// Window length in frames.
    #[arg(long, default_value_t = 75)]
    pub window: usize,
    #[arg(long, default_value_t = 25)]
    pub stride: usize,
    /// Vehicle distance threshold, meters.
    #[arg(long, default_value_t = 15.0)]
    pub th: f64,
    /// Maximum pairwise pedestrian distance, meters.
    #[arg(long, default_value_t = 18.0)]
    pub rmax: f64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Output directory for segments.jsonl and stats.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// segments.jsonl, or a directory holding it.
    #[arg(long)]
    pub segments: PathBuf,
    /// Also write the counts as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Corpus directory or scenes.jsonl.
    #[arg(long)]
    pub input: PathBuf,
    /// segments.jsonl (default: next to the scenes).
    #[arg(long)]
    pub segments: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Use vehicle tokens and the interaction block.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub vehicles: OnOff,
    /// Corner groups per vehicle: 1, 2, 4, 6, 8 or 12.
    #[arg(long, default_value_t = 12)]
    pub corner_groups: usize,
    /// Feature dimension D.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Retained DCT coefficients L.
    #[arg(long)]
    pub dct_keep: Option<usize>,
    /// Observed displacement steps.
    #[arg(long)]
    pub t_obs: Option<usize>,
    /// Predicted frames.
    #[arg(long)]
    pub n_pred: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Batch size.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Global gradient-norm limit (0 disables clipping).
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    /// Keep a checkpoint every this many epochs (0 for none).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Start from this checkpoint instead of a fresh model; model flags are ignored.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Output directory for loss.csv and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to evaluate; repeat for a grouping ablation table.
    #[arg(long, required = true)]
    pub ours: Vec<PathBuf>,
    /// Pedestrian-only checkpoint reported alongside.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    /// Comma-separated horizons in seconds.
    #[arg(long, default_value = "0.2,0.6,1.0")]
    pub horizons: String,
    /// Score only the frame at each horizon instead of averaging up to it.
    #[arg(long)]
    pub at_frame: bool,
    /// Output directory for report.csv / report.txt (and ablation.csv).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Only segments of this scene.
    #[arg(long)]
    pub scene: Option<String>,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub ours: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Only segments of this scene.
    #[arg(long)]
    pub scene: Option<String>,
    /// At most this many plots.
    #[arg(long, default_value_t = 10)]
    pub limit: usize,
    /// Output directory for SVG files.
    #[arg(long)]
    pub out: PathBuf,
}

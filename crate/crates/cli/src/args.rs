use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "graspdiff", version, about = "Dexterous grasp sampling, evaluation and refinement on toy objects")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Root seed; every random stream of the run derives from it.
    #[arg(long, global = true, env = "GRASPDIFF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Caps the worker threads used by parallel stages.
    #[arg(long, global = true, env = "GRASPDIFF_THREADS")]
    pub threads: Option<usize>,
    /// TOML file of defaults: top-level keys for global flags, one table per
    /// subcommand. Command-line flags and environment variables win.
    #[arg(long, global = true, env = "GRASPDIFF_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a labeled toy dataset.
    GenData(GenDataArgs),
    /// Train the diffusion grasp sampler on the positives of the train split.
    TrainSampler(TrainSamplerArgs),
    /// Train the grasp evaluator on the train split.
    TrainEvaluator(TrainEvaluatorArgs),
    /// Draw grasps for a point cloud.
    Sample(SampleArgs),
    /// Score grasps against a point cloud.
    Score(ScoreArgs),
    /// Sample and refine grasps with a named method.
    Refine(RefineArgs),
    /// Frequency-encoding ablation of the evaluator.
    Ablate(AblateArgs),
    /// Run every refinement method on the test objects of a dataset.
    Bench(BenchArgs),
    /// Summarize bench runs as markdown and JSON.
    Report(ReportArgs),
    /// Basis point set utilities.
    #[command(subcommand)]
    Bps(BpsCommand),
}

impl Command {
    /// Subcommand path used for config tables and the run manifest.
    pub fn path(&self) -> Vec<&'static str> {
        match self {
            Command::GenData(_) => vec!["gen-data"],
            Command::TrainSampler(_) => vec!["train-sampler"],
            Command::TrainEvaluator(_) => vec!["train-evaluator"],
            Command::Sample(_) => vec!["sample"],
            Command::Score(_) => vec!["score"],
            Command::Refine(_) => vec!["refine"],
            Command::Ablate(_) => vec!["ablate"],
            Command::Bench(_) => vec!["bench"],
            Command::Report(_) => vec!["report"],
            Command::Bps(BpsCommand::Encode(_)) => vec!["bps", "encode"],
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpsCommand {
    /// Encode a point cloud as basis point distances.
    Encode(BpsEncodeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct OutArg {
    /// Fresh output directory (created; must be empty if it exists).
    /// Defaults to a new timestamped directory under `runs/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BasisArgs {
    #[arg(long, default_value_t = graspdiff::bps::DEFAULT_BASIS_SIZE)]
    pub basis_size: usize,
    #[arg(long, default_value_t = graspdiff::bps::DEFAULT_RADIUS)]
    pub basis_radius: f64,
    /// Seed of the basis; separately trained models must share it.
    #[arg(long, default_value_t = 0)]
    pub basis_seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small batches and a higher learning rate for toy datasets.
    Desk,
    /// Full-scale batch sizes and learning rates.
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 100)]
    pub objects: usize,
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    #[arg(long, default_value_t = 60)]
    pub grasps_per_view: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainSamplerArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-epoch learning-rate decay.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Object tokens the BPS feature is projected to.
    #[arg(long, default_value_t = 32)]
    pub tokens: usize,
    #[arg(long, default_value_t = 2)]
    pub self_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub cross_layers: usize,
    #[arg(long, default_value_t = 256)]
    pub head_hidden: usize,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluatorArch {
    #[arg(long, default_value_t = 256)]
    pub object_dim: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "512,256,64")]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluatorTraining {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainEvaluatorArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Frequencies for position, rotation and joints, e.g. `10,4,0`.
    #[arg(long, default_value = "10,4,0")]
    pub freq: String,
    #[command(flatten)]
    pub arch: EvaluatorArch,
    #[command(flatten)]
    pub training: EvaluatorTraining,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// Sampler weights file.
    #[arg(long)]
    pub sampler: PathBuf,
    /// Point cloud text file, one `x y z` per line.
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long)]
    pub allow_untrained: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub evaluator: PathBuf,
    #[arg(long)]
    pub cloud: PathBuf,
    /// Grasp JSON file.
    #[arg(long)]
    pub grasps: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ProposalArgs {
    /// Proposal standard deviations for position, rotation and joints.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.05])]
    pub sigmas: Vec<f64>,
    /// Iterations of one-stage refinement.
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Pose-stage and joint-stage iterations of two-stage refinement.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 10])]
    pub stage_split: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct RefineArgs {
    #[arg(long)]
    pub sampler: PathBuf,
    #[arg(long)]
    pub evaluator: PathBuf,
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// One of sampler, esr1, esr2, egd, egd+esr1, egd+esr2.
    #[arg(long, default_value = "esr2")]
    pub method: String,
    /// Guidance strength.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[command(flatten)]
    pub proposal: ProposalArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Semicolon-separated frequency configurations.
    #[arg(long, default_value = "0,0,0;10,4,0")]
    pub configs: String,
    #[command(flatten)]
    pub arch: EvaluatorArch,
    #[command(flatten)]
    pub training: EvaluatorTraining,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub sampler: PathBuf,
    #[arg(long)]
    pub evaluator: PathBuf,
    /// Comma-separated methods, or `all`.
    #[arg(long, default_value = "all")]
    pub methods: String,
    #[arg(long, default_value_t = 20)]
    pub grasps_per_view: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[command(flatten)]
    pub proposal: ProposalArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Run directories produced by `bench`.
    pub runs: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct BpsEncodeArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    /// Encode the cloud as given instead of centering it first.
    #[arg(long)]
    pub no_center: bool,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub out: OutArg,
}

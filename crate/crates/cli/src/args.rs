use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nfm_core::{Activation, PoolingKind};

#[derive(Debug, Parser)]
#[command(
    name = "nfm",
    version,
    about = "Train and evaluate FM / NFM models on sparse data"
)]
pub struct Cli {
    /// Worker threads for batch scoring (0 = all cores).
    #[arg(long, global = true, env = "NFM_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One-hot encode a raw log, add negatives and write train/validation/test libfm files.
    Prepare(PrepareArgs),
    /// Train an FM or NFM and write a checkpoint plus per-epoch CSV.
    Train(TrainArgs),
    /// Print RMSE and parameter count of a checkpoint on a libfm file.
    Evaluate(EvaluateArgs),
    /// Run a named experiment preset and write a results CSV.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RawPreset {
    /// Tab-separated frappe.csv
    Frappe,
    /// MovieLens tags.csv
    Movielens,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw delimited log.
    #[arg(long)]
    pub raw: PathBuf,
    /// Known raw layout; overridden by --columns/--item.
    #[arg(long, value_enum, default_value = "frappe")]
    pub preset: RawPreset,
    /// Comma-separated columns to one-hot encode (header names, or 0-based positions with --no-header).
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Column holding the item; must be one of the encoded columns.
    #[arg(long)]
    pub item: Option<String>,
    /// Field delimiter: a single character, or "tab".
    #[arg(long)]
    pub delimiter: Option<String>,
    /// The raw file has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Negatives sampled per positive.
    #[arg(long, default_value_t = 2)]
    pub ratio: usize,
    #[arg(long, default_value_t = 2017)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Output file stem: <name>.train.libfm and so on.
    #[arg(long, default_value = "data")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fm,
    Nfm,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding *.train.libfm, *.validation.libfm and *.test.libfm.
    #[arg(long, conflicts_with_all = ["train", "valid"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "valid")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub valid: Option<PathBuf>,
    /// Extra file whose features count towards the feature space.
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "nfm")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 64)]
    pub factors: usize,
    /// Hidden layer widths, e.g. 64 or 64,64. Empty means NFM-0.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub layers: Vec<usize>,
    #[arg(long, default_value = "relu")]
    pub activation: Activation,
    #[arg(long, default_value = "bi")]
    pub pooling: PoolingKind,
    /// Dropout ratios: pooling layer first, then one per hidden layer.
    /// A single value is used for the pooling layer, hidden layers get 0.5.
    #[arg(long, value_delimiter = ',')]
    pub dropout: Option<Vec<f64>>,
    /// Batch-normalize the pooled vector and every hidden layer.
    #[arg(long)]
    pub bn: bool,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub patience: usize,
    /// L2 strength on embeddings.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 2017)]
    pub seed: u64,
    /// FM checkpoint whose parameters initialise the NFM.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    /// Recompute batch-norm statistics over the full training set after training.
    #[arg(long)]
    pub exact_bn_stats: bool,
    #[command(flatten)]
    pub clip: ClipArgs,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV; defaults to <out>.epochs.csv.
    #[arg(long)]
    pub epochs_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClipArgs {
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub clip_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub clip_max: f64,
    /// Score raw predictions without clipping.
    #[arg(long)]
    pub no_clip: bool,
}

impl ClipArgs {
    pub fn range(&self) -> Option<(f64, f64)> {
        (!self.no_clip).then_some((self.clip_min, self.clip_max))
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// libfm file to score.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub clip: ClipArgs,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Preset name, e.g. table3-frappe.
    #[arg(long)]
    pub preset: String,
    /// Directory with prepared libfm splits or the raw log.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2017)]
    pub seed: u64,
    /// Cap on epochs per run, overriding the preset.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Results CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Write each run's per-epoch CSV into this directory.
    #[arg(long)]
    pub epochs_dir: Option<PathBuf>,
}

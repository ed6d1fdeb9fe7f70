use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ctmos", version, about = "Contextual-temperature mixture-of-softmaxes toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize raw text, build the vocabulary and write a prepared corpus.
    Preprocess(PreprocessArgs),
    /// Write a synthetic raw-text corpus.
    Synth(SynthArgs),
    /// Train a model on a prepared corpus.
    Train(TrainArgs),
    /// Report the perplexity of a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Closed-form two-class gradient oracle.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Temperature ablations.
    #[command(subcommand)]
    Ablate(AblateCommand),
    /// Temperature analyses of trained checkpoints.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Write gradient surfaces as CSV.
    Mesh(MeshArgs),
    /// Compare autodiff gradients against the closed forms.
    Check(CheckArgs),
}

#[derive(Debug, Subcommand)]
pub enum AblateCommand {
    /// One MoS model per fixed temperature plus one contextual model.
    ConstantTau(ConstantTauArgs),
    /// One contextual model per temperature normalization.
    Normalization(NormalizationArgs),
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Per-token temperature over a series of checkpoints.
    Trajectories(TrajectoryArgs),
    /// Mean temperature by normalized sentence position.
    Positions(PositionArgs),
    /// Side-by-side top-k predictions of two checkpoints.
    CaseStudy(CaseStudyArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw text file, or a directory holding train.txt and optionally
    /// valid.txt and test.txt.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary size including special tokens.
    #[arg(long, default_value_t = 10_000)]
    pub cap: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; train.txt, valid.txt and test.txt are written.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum training tokens; validation and test get a tenth each.
    #[arg(long, default_value_t = 100_000)]
    pub tokens: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Model and training settings; flags override the `--config` file.
#[derive(Debug, Args, Default, Clone)]
pub struct RecipeArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// none, constant or contextual.
    #[arg(long)]
    pub temperature: Option<String>,
    /// Fixed temperature for `--temperature constant`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// softmax, pow-tanh or tanh-shift.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mixtures: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub bptt: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared corpus directory.
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub recipe: RecipeArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "valid")]
    pub split: String,
    #[arg(long, default_value_t = 35)]
    pub bptt: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    /// Directory for the run manifest and result table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Grid points per axis.
    #[arg(long, default_value_t = 50)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConstantTauArgs {
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed temperatures, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,4")]
    pub taus: Vec<f64>,
    #[command(flatten)]
    pub recipe: RecipeArgs,
}

#[derive(Debug, Args)]
pub struct NormalizationArgs {
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Normalizations to compare, comma-separated.
    #[arg(long = "variants", value_delimiter = ',', default_value = "softmax,pow-tanh,tanh-shift")]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub recipe: RecipeArgs,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    /// Checkpoints in epoch order, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Track the most frequent tokens, by vocabulary rank.
    #[arg(long, default_value_t = 10)]
    pub tokens: usize,
    /// Probe windows taken from the start of the split.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    #[arg(long, default_value = "valid")]
    pub split: String,
    #[arg(long, default_value_t = 35)]
    pub bptt: usize,
}

#[derive(Debug, Args)]
pub struct PositionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "valid")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    /// Model A, whose temperatures are reported.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub context: String,
    #[arg(long, default_value_t = 4)]
    pub topk: usize,
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pau::{EvidenceConfig, EvidenceKind, OptimizerKind, RemovalSide, TargetMap};

#[derive(Debug, Parser)]
#[command(name = "pau", version, about = "Prototype-based aleatoric uncertainty for cross-modal retrieval")]
pub struct Cli {
    /// Worker threads for similarity and evaluation (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus with ground-truth ambiguity labels.
    GenSynth(GenSynthArgs),
    /// Learn prototype banks from paired embeddings.
    Train(TrainArgs),
    /// Write per-instance uncertainty scores.
    Score(ScoreArgs),
    /// Re-rank the similarity matrix with uncertainty weights, optionally fitting them.
    Rerank(RerankArgs),
    /// Retrieval metrics (R@1/5/10, MdR, MnR) in both directions.
    Evaluate(EvaluateArgs),
    /// Diagnostics over trained banks plus standalone numeric checks.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Default,
    Ambiguous,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory for vis.paue, txt.paue, pairs.tsv and labels.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k_true: Option<usize>,
    /// Draw the semantic count uniformly from 1..=M.
    #[arg(long, conflicts_with = "weights")]
    pub m_max: Option<usize>,
    /// Explicit distribution over semantic counts 1, 2, ...
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub captions: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Vision embeddings (.paue binary or .csv).
    #[arg(long)]
    pub vis: PathBuf,
    /// Text embeddings (.paue binary or .csv).
    #[arg(long)]
    pub txt: PathBuf,
    /// Tab-separated vision/text index pairs.
    #[arg(long)]
    pub pairs: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvidenceArgs {
    #[arg(long, default_value = "exponential")]
    pub evidence: EvidenceKind,
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 20.0)]
    pub theta: f64,
}

impl EvidenceArgs {
    pub fn config(&self) -> EvidenceConfig {
        EvidenceConfig {
            kind: self.evidence,
            gamma: self.gamma,
            theta: self.theta,
            tau: self.tau,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to the checkpoint path with a .history.csv suffix.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_div: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    /// How batch similarity means become uncertainty targets.
    #[arg(long, default_value = "affine")]
    pub target_map: TargetMap,
    #[command(flatten)]
    pub evidence: EvidenceArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, required_unless_present = "txt")]
    pub vis: Option<PathBuf>,
    #[arg(long)]
    pub txt: Option<PathBuf>,
    /// CSV with columns modality,index,u.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BetaArgs {
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Grid-search the betas on a validation split of the items.
    #[arg(long, conflicts_with_all = ["beta1", "beta2"])]
    pub fit_betas: bool,
    /// Fraction of vision items (with their captions) used for fitting.
    #[arg(long, default_value_t = 0.5, requires = "fit_betas")]
    pub val_fraction: f64,
    #[command(flatten)]
    pub betas: BetaArgs,
    /// Copy of the checkpoint carrying the betas that were used.
    #[arg(long)]
    pub save_ckpt: Option<PathBuf>,
    /// Re-ranked similarity matrix as CSV (rows are vision items).
    #[arg(long)]
    pub matrix_out: Option<PathBuf>,
    /// Before/after report CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Also report the re-ranked variant using this checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub betas: BetaArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Pearson correlation of uncertainty with mean similarity (and ground-truth ambiguity).
    Pcc(PccArgs),
    /// R@1 after removing the most uncertain (or random) pairs.
    RemovalCurve(RemovalArgs),
    /// Softmax entropy against evidential uncertainty on two flat similarity vectors.
    EntropyDemo(EntropyDemoArgs),
    /// Log-probability that a random caption batch has no duplicate-video collision.
    MsvdProb(MsvdArgs),
}

#[derive(Debug, Args)]
pub struct PccArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    #[arg(long)]
    pub txt: PathBuf,
    /// labels.csv from gen-synth.
    #[arg(long, requires = "pairs")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CurveMode {
    Uncertainty,
    Random,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Gallery,
    Query,
}

impl From<SideArg> for RemovalSide {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Gallery => RemovalSide::Gallery,
            SideArg::Query => RemovalSide::Query,
        }
    }
}

#[derive(Debug, Args)]
pub struct RemovalArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: CurveMode,
    /// Fractions of pairs to remove.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.3")]
    pub fractions: Vec<f64>,
    #[arg(long, value_enum, default_value = "gallery")]
    pub side: SideArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EntropyDemoArgs {
    #[arg(long, default_value_t = 0.8)]
    pub high: f64,
    #[arg(long, default_value_t = 0.2)]
    pub low: f64,
    /// Number of prototypes.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[command(flatten)]
    pub evidence: EvidenceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MsvdArgs {
    /// Number of captions in the training set.
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub batch: u64,
    /// Captions per video.
    #[arg(long)]
    pub group: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

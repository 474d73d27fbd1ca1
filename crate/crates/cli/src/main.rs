mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoprior::Error;

/// Feature-distribution geometry experiments for long-tailed classification.
#[derive(Debug, Parser)]
#[command(name = "geoprior", version)]
pub struct Cli {
    /// Seed for every random draw. Falls back to the config file, then GEOPRIOR_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tailed dataset.
    Synth(SynthArgs),
    /// Per-class geometry: eigenvalues, spectral ratios, similarity and alignment matrices.
    Analyze(AnalyzeArgs),
    /// Class similarity rankings from averaged prediction scores.
    Similarity(SimilarityArgs),
    /// Random unit vector densities and Monte-Carlo histograms.
    Randvec(RandvecArgs),
    /// Add FUR-perturbed tail features to a feature file.
    Augment(AugmentArgs),
    /// Run the three-phase training pipeline.
    Train(TrainArgs),
    /// Phenomena checks on trained models.
    Phenomena(PhenomenaArgs),
    /// 2-D principal-component coordinates of a feature file.
    Project(ProjectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Imbalance factor: largest class count over smallest.
    #[arg(long = "if")]
    pub imbalance_factor: Option<f64>,
    /// Sample count of the largest class.
    #[arg(long = "max")]
    pub max_count: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    /// `paired` or `independent`.
    #[arg(long)]
    pub sharing: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Training feature file (.csv or binary). Synthesized from the config when absent.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test feature file; required with --train.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Eigenvector pairs compared and spectral ratio depth.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Mean-center class features before the covariance.
    #[arg(long)]
    pub centered: bool,
    /// Class pairs for alignment matrices, e.g. `0:5,1:6`.
    #[arg(long, value_delimiter = ',')]
    pub pairs: Vec<String>,
    /// Embed the input with this checkpoint first.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimilarityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Score the inputs with this checkpoint instead of training one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `probabilities` or `logits`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Classes with at least this many samples count as head.
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RandvecArgs {
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Points in the density table over [-1, 1].
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output file name inside --out; format follows its extension.
    #[arg(long, default_value = "augmented.csv")]
    pub output: PathBuf,
    #[arg(long)]
    pub na: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub k_top: Option<usize>,
    /// `eigenvalue` or `sqrt_eigenvalue`.
    #[arg(long)]
    pub weighting: Option<String>,
    /// Classes with at least this many samples count as head.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Explicit head classes, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub head: Vec<u32>,
    /// Explicit tail-to-head matches, e.g. `5:0,6:1`.
    #[arg(long = "match", value_delimiter = ',')]
    pub matches: Vec<String>,
    /// Estimate head geometries without mean-centering.
    #[arg(long)]
    pub uncentered: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Phase 1 only.
    #[arg(long, conflicts_with = "no_phase3")]
    pub erm: bool,
    /// Skip phase 3 (decoupled training with FUR).
    #[arg(long)]
    pub no_phase3: bool,
    /// Add the re-matching fourth phase.
    #[arg(long)]
    pub fourth_phase: bool,
    #[arg(long)]
    pub m1: Option<usize>,
    #[arg(long)]
    pub m2: Option<usize>,
    #[arg(long)]
    pub m3: Option<usize>,
    #[arg(long)]
    pub lr1: Option<f64>,
    #[arg(long)]
    pub lr2: Option<f64>,
    #[arg(long)]
    pub lr3: Option<f64>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub na: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PhenomenaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained checkpoints; when absent, `--n-models` models are trained.
    #[arg(long, num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub n_models: usize,
    /// Balanced counterpart of the training data for the rank-agreement check.
    #[arg(long)]
    pub balanced: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Embed the input with this checkpoint first.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Failure categories with stable exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidConfig(_)
            | Error::UnknownClass(_)
            | Error::NoHeadClass(_)
            | Error::UnmatchedTail(_)
            | Error::InsufficientModels(_)
            | Error::InsufficientHeadData => Failure::Config(msg),
            Error::NoConvergence { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFinite(_)
            | Error::ZeroSpectrum
            | Error::OutOfDomain { .. } => Failure::Numeric(msg),
            _ => Failure::Data(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod failure;
mod files;

#[derive(Parser)]
#[command(name = "cvae", version, about = "Correlated variational auto-encoders on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Parameter file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Spanning-tree edge weights of a graph file.
    Weights(WeightsArgs),
    /// Synthetic datasets and edge hold-outs.
    Generate(GenerateArgs),
    /// Fit a model and write a checkpoint with its loss trace.
    Train(TrainArgs),
    /// Score a checkpoint on matching, clustering or link prediction.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a small problem.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenerateKind {
    /// Tree-structured Gaussian latents decoded to binary rows.
    TreeGmm,
    /// Rows split into pairs of dual users.
    DualSplit,
    /// Train/test split of a graph's edges.
    LinkHoldout,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: GenerateKind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub data_dim: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Source rows to generate for `dual-split` without `--input`.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Existing 0/1 matrix to split (dual-split).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Graph whose edges are held out (link-holdout).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// vae, cvae_ind or cvae_corr
    #[arg(long)]
    pub variant: Option<String>,
    /// bernoulli or multinomial
    #[arg(long)]
    pub likelihood: Option<String>,
    /// tanh or relu
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gamma_guard_c: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Vertices per step.
    #[arg(long)]
    pub b1: Option<usize>,
    /// Edges (and negative pairs) per step.
    #[arg(long)]
    pub b2: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Matching,
    Clustering,
    Linkpred,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "debug_oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Dual index of every row (matching).
    #[arg(long)]
    pub pairing: Option<PathBuf>,
    /// True 0/1 labels (clustering).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Training graph (link prediction).
    #[arg(long)]
    pub train_graph: Option<PathBuf>,
    /// Held-out edges (link prediction).
    #[arg(long)]
    pub test_edges: Option<PathBuf>,
    /// independent or correlated; defaults to the checkpoint's family.
    #[arg(long)]
    pub mode: Option<String>,
    /// Replace model distances with ones built from the ground truth.
    #[arg(long)]
    pub debug_oracle: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Largest acceptable relative error.
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Weights(a) => commands::weights(a),
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

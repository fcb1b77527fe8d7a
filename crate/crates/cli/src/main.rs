mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use hbdm::GraphMode;

use crate::commands::{DivergedError, UsageError};

#[derive(Parser, Debug)]
#[command(
    name = "hbdm",
    version,
    about = "Hierarchical block distance model: graph embedding, evaluation and visualization"
)]
struct Cli {
    /// Worker threads; falls back to HBDM_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an embedding and write it with its tree, log and manifest.
    Embed(EmbedArgs),
    /// Run an evaluation protocol.
    Eval {
        #[command(subcommand)]
        task: EvalTask,
    },
    /// Draw the dendrogram, ordered adjacency matrices and scatter of a run.
    Viz(VizArgs),
}

#[derive(Subcommand, Debug)]
enum EvalTask {
    /// Hide edges, train on the rest and score held-out edges against non-edges.
    LinkPrediction(LinkArgs),
    /// kNN node classification on the embedding.
    Classify(ClassifyArgs),
}

fn parse_mode(s: &str) -> Result<GraphMode, String> {
    s.parse().map_err(|e: hbdm::HbdmError| e.to_string())
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Whitespace-separated edge list.
    #[arg(long)]
    pub input: PathBuf,
    /// undirected, directed or bipartite.
    #[arg(long, default_value = "undirected", value_parser = parse_mode)]
    pub mode: GraphMode,
    /// Keep only the largest connected component.
    #[arg(long)]
    pub giant_component: bool,
}

/// Training flags; each one overrides the matching field of `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// JSON file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub rebuild_every: Option<usize>,
    #[arg(long, action = ArgAction::Set)]
    pub random_effects: Option<bool>,
    /// Optimise the exact likelihood (small graphs only).
    #[arg(long, action = ArgAction::Set)]
    pub exact: Option<bool>,
    #[arg(long)]
    pub exact_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value = "hbdm-run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct LinkArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Fraction of edges to hide.
    #[arg(long, default_value_t = 0.5)]
    pub hide_fraction: f64,
    /// Allow disconnected graphs by protecting a spanning forest.
    #[arg(long)]
    pub spanning_forest: bool,
    /// Score with the embeddings of an earlier run instead of training.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "hbdm-run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// `node_label<TAB>class[,class...]` per line.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.5)]
    pub train_frac: f64,
    /// Classify with the embeddings of an earlier run instead of training.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "hbdm-run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct VizArgs {
    /// Output directory of an `embed` run.
    #[arg(long)]
    pub run: PathBuf,
    /// Comma-separated tree levels for the adjacency plots (default: 1 up to 3).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Colour the scatter by these classes instead of the top-level clusters.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HBDM_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(v.trim().parse().map_err(|_| {
                UsageError(format!(
                    "HBDM_THREADS must be a positive integer, got '{v}'"
                ))
            })?),
            _ => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(UsageError("thread count must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Embed(a) => commands::embed(&a),
        Command::Eval {
            task: EvalTask::LinkPrediction(a),
        } => commands::link_prediction(&a),
        Command::Eval {
            task: EvalTask::Classify(a),
        } => commands::classify(&a),
        Command::Viz(a) => commands::viz(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else if e.downcast_ref::<DivergedError>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

//! `retab`: command-line driver for response expansion and its evaluation tools.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use retab_core::affinity::{DEFAULT_BG_THRESH, DEFAULT_FG_THRESH, DEFAULT_GAMMA};
use retab_core::boundary::{DEFAULT_GT_RADIUS, DEFAULT_TAU};
use retab_core::propagation::{DEFAULT_BETA, DEFAULT_ITERS};
use retab_core::pseudolabel::DEFAULT_BG_ALPHA;
use retab_core::Strategy;

const STRATEGY_HELP: &str = "Propagation strategy: one-stage, nbd-bd or btp";

#[derive(Debug, Parser)]
#[command(
    name = "retab",
    version,
    about = "Boundary-aware response expansion for weak-shot segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Partition a label manifest into base and novel samples for a fold.
    SplitFolds {
        #[arg(long)]
        fold: usize,
        /// JSON file of the form {"samples": {"<id>": [categories]}}.
        #[arg(long)]
        manifest: PathBuf,
        /// Write the id lists here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute pixel-pair affinities from a feature map.
    Affinity {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        /// Output directory for the pair triplet.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build pair affinity labels from a segmentation map or from CAMs.
    MakeAffLabels(MakeAffLabelsArgs),
    /// Score a predicted affinity table against pair labels.
    EvalAffinity {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Evaluate boundary probability maps against ground truth, one JSON line per sample.
    EvalBoundary(EvalBoundaryArgs),
    /// Revise CAMs by random-walk propagation.
    Propagate(PropagateArgs),
    /// Turn revised responses into a label map.
    PseudoLabels {
        /// Revised responses, (H, W, K) float32.
        #[arg(long)]
        revised: PathBuf,
        /// Category index of each response channel.
        #[arg(long, value_delimiter = ',', required = true)]
        categories: Vec<u8>,
        /// Output size as HxW; defaults to the response grid.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        #[arg(long, default_value_t = DEFAULT_BG_ALPHA)]
        bg_alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean IoU over all, base and novel categories for a directory of label maps.
    EvalMiou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        fold: usize,
    },
    /// Run the full pipeline over a sample manifest.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the pipeline for several boundary thresholds.
    TauSweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        taus: Vec<f64>,
        /// Also write the rows to this file as a JSON array.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relabel ground-truth background pixels that are predicted as a novel category.
    SelfTrainRelabel {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LabelMode {
    Gt,
    Pseudo,
}

#[derive(Debug, Args)]
struct MakeAffLabelsArgs {
    #[arg(long, value_enum)]
    mode: LabelMode,
    /// Segmentation map (gt mode).
    #[arg(long, required_if_eq("mode", "gt"))]
    seg: Option<PathBuf>,
    /// Working grid as HxW; the segmentation map is resized to it by nearest neighbour.
    #[arg(long, value_parser = parse_size)]
    grid: Option<(usize, usize)>,
    /// CAMs, (H, W, K) float32 (pseudo mode).
    #[arg(long, required_if_eq("mode", "pseudo"))]
    cam: Option<PathBuf>,
    /// Image-level categories, one per CAM channel (pseudo mode).
    #[arg(long, value_delimiter = ',')]
    categories: Vec<u8>,
    #[arg(long, default_value_t = DEFAULT_FG_THRESH)]
    fg_thresh: f64,
    #[arg(long, default_value_t = DEFAULT_BG_THRESH)]
    bg_thresh: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    /// Drop pairs touching the predicted boundary region.
    #[arg(long, requires = "boundary")]
    filter_boundary: bool,
    /// Boundary probability map on the working grid.
    #[arg(long)]
    boundary: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Output directory for the label triplet.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GtKind {
    /// Binary boundary maps: nonzero marks boundary, 255 is ignored.
    Boundary,
    /// Segmentation maps; boundaries are derived from label changes.
    Seg,
}

#[derive(Debug, Args)]
struct EvalBoundaryArgs {
    /// Directory of boundary probability maps (float32).
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth maps with matching file names.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value_t = GtKind::Boundary)]
    gt_kind: GtKind,
    #[arg(long, default_value_t = DEFAULT_GT_RADIUS)]
    radius: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Debug, Args)]
struct PropagateArgs {
    #[arg(long, default_value_t = Strategy::Btp, help = STRATEGY_HELP)]
    strategy: Strategy,
    /// CAMs, (H, W, K) float32.
    #[arg(long)]
    cam: PathBuf,
    /// Features, (H, W, D) float32.
    #[arg(long)]
    features: PathBuf,
    /// Boundary probabilities, (H, W) float32.
    #[arg(long)]
    boundary: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = DEFAULT_ITERS)]
    iters: usize,
    /// Walk length of the second stage; defaults to --iters.
    #[arg(long)]
    stage2_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Pipeline settings: flags override the config file, which overrides defaults.
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    stage2_iters: Option<usize>,
    #[arg(long)]
    fg_thresh: Option<f64>,
    #[arg(long)]
    bg_thresh: Option<f64>,
    #[arg(long)]
    bg_alpha: Option<f64>,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, help = STRATEGY_HELP)]
    strategy: Option<Strategy>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X', ','])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("invalid dimension {v:?}"))
    };
    Ok((dim(h)?, dim(w)?))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .any(|e| e.downcast_ref::<retab_core::Error>().is_some_and(|e| e.is_validation()));
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

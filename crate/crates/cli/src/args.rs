use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "netgnn",
    version,
    about = "Simulate networks, train a path/link message-passing model, and optimize routing with it",
    args_override_self = true
)]
pub struct Cli {
    /// Master seed; every random choice in a run derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (simulate) or directory (all other commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML file with default flag values; flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a JSON-lines dataset with the packet simulator.
    Simulate(SimulateArgs),
    /// Train a delay or jitter model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Pick the best routing from a candidate set.
    Optimize(OptimizeArgs),
    /// What-if analyses on top of the optimizer.
    Whatif {
        #[command(subcommand)]
        what: Whatif,
    },
}

#[derive(Debug, Subcommand)]
pub enum Whatif {
    /// Add users one by one and report when the objective breaks a bound.
    AddUsers(AddUsersArgs),
    /// Find the best place for one new bidirectional link.
    AddLink(AddLinkArgs),
    /// Optimize under random link failures.
    LinkFailures(LinkFailuresArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Nsfnet,
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Delay,
    Jitter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    MeanDelay,
    MaxDelay,
    MeanJitter,
    MaxJitter,
}

/// Where the topology comes from. Without `--topology` or `--preset`, a ring
/// with random chords is generated.
#[derive(Debug, Clone, Args)]
pub struct TopologyArgs {
    /// JSON topology file (same shape as the dataset `topology` field).
    #[arg(long, conflicts_with = "preset")]
    pub topology: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Extra random edges on top of the ring; defaults to nodes / 2.
    #[arg(long)]
    pub chords: Option<usize>,
    #[arg(long)]
    pub capacity: Option<f64>,
    #[arg(long)]
    pub topology_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub warmup: Option<f64>,
    /// Queue size per link, in packets.
    #[arg(long)]
    pub buffer: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub topology: TopologyArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Distinct random-weight shortest-path routings.
    #[arg(long)]
    pub routings: Option<usize>,
    /// Traffic intensity: `16`, `8,12,16` or a range `8:16`.
    #[arg(long)]
    pub ti: Option<String>,
    /// Samples per (routing, TI) cell.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training dataset (JSON lines).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset for periodic MSE; see also `--holdout-routings`.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Move all samples of this many routings from `--data` to evaluation.
    #[arg(long)]
    pub holdout_routings: Option<usize>,
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// Start from a delay checkpoint (jitter transfer).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Optimizer steps (default 20000).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Samples per batch (default 32).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate until `--lr-switch` (default 0.001).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_after: Option<f64>,
    #[arg(long)]
    pub lr_switch: Option<u64>,
    /// L2 weight on the readout kernels; the penalty is `l2 / 2 * sum(w^2)` (default 0.1).
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Message-passing rounds T (default 8).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub path_dim: Option<usize>,
    #[arg(long)]
    pub link_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// MC-dropout draws per prediction.
    #[arg(long)]
    pub mc: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Delay checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub jitter_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub mc: Option<usize>,
    /// Score candidates with the simulator instead of a model.
    #[arg(long)]
    pub simulator: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    #[command(flatten)]
    pub topology: TopologyArgs,
    /// JSON array of N² row-major demands; otherwise drawn at `--ti`.
    #[arg(long, conflicts_with = "ti")]
    pub tm: Option<PathBuf>,
    #[arg(long)]
    pub ti: Option<f64>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Size of the candidate routing set (hop-count routing plus random variants).
    #[arg(long)]
    pub candidates: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// SLA pairs as `s-d,s-d,...`.
    #[arg(long, requires = "sla_bound")]
    pub sla: Option<String>,
    #[arg(long)]
    pub sla_bound: Option<f64>,
    /// Simulate the winner and the hop-count baseline.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AddUsersArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Nodes the users attach to, in order: `10,2,8`.
    #[arg(long)]
    pub node_order: Option<String>,
    #[arg(long)]
    pub factor: Option<f64>,
    #[arg(long)]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AddLinkArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// `all` for every unlinked pair, or `a-b,a-b,...`.
    #[arg(long)]
    pub pairs: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct LinkFailuresArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Failure counts to sweep: `0,1,2`.
    #[arg(long)]
    pub failures: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
}

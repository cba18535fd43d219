//! Command-line flags. Every per-command flag is optional so it can override
//! the same key from `--config`; the merged record is validated by the
//! command's config type in [`crate::config`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "gt", version, about = "Bayesian group testing experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON file with command parameters; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Master seed (default: config value, then $GT_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random regular pooling design.
    Design(DesignArgs),
    /// Design, truth, test results, BP, decision and scores end to end.
    Simulate(SimulateArgs),
    /// Posterior marginals and Bayes factors from test results.
    Infer(InferArgs),
    /// Binary estimates from posterior marginals.
    Decide(DecideArgs),
    /// ROC curve and AUC of scores against known truth.
    Roc(RocArgs),
    /// Population dynamics for the asymptotic marginal distributions.
    Pd(PdArgs),
    /// Effectiveness of group testing over a grid of test characteristics.
    Phase(PhaseArgs),
    /// Compare BP with exhaustive enumeration on small instances.
    Validate(ValidateArgs),
    /// Per-iteration BP cavity histograms against population dynamics.
    CompareBpPd(CompareArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DesignArgs {
    /// Number of items.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of pools.
    #[arg(long)]
    pub m: Option<usize>,
    /// Pool size.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub p_tp: Option<f64>,
    #[arg(long)]
    pub p_fp: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BpArgs {
    /// Per-entry convergence tolerance.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long, value_parser = ["prior", "random"])]
    pub init: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct RiskArgs {
    #[arg(long)]
    pub lambda_fn: Option<f64>,
    #[arg(long)]
    pub lambda_fp: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Independent instances to run.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_parser = ["bernoulli", "exact"])]
    pub sampling: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub risk: RiskArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub bp: BpArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_parser = ["bp", "exact"])]
    pub engine: Option<String>,
    /// Largest item count accepted by the exact engine.
    #[arg(long)]
    pub cap: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub bp: BpArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DecideArgs {
    /// Posterior CSV as written by `infer`.
    #[arg(long)]
    pub marginals: Option<PathBuf>,
    /// Optional truth CSV; adds error rates to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub risk: RiskArgs,
    /// Fixed cutoff on the marginals instead of the risk-optimal one.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long, value_parser = ["marginal", "bayes-factor"])]
    pub rule: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct RocArgs {
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Score column in the scores CSV.
    #[arg(long)]
    pub column: Option<String>,
    /// Uniform grid points added to the observed scores.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Prevalence for the posterior AUC; omitted when absent.
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PdRunArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    /// Pools per item ratio M/N; sets C = alpha * K.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = ["full", "desk"])]
    pub preset: Option<String>,
    #[arg(long)]
    pub n_pop: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, value_parser = ["deterministic", "random"])]
    pub init: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct PdArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: PdRunArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PhaseArgs {
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub p_tp_min: Option<f64>,
    #[arg(long)]
    pub p_tp_max: Option<f64>,
    #[arg(long)]
    pub p_tp_points: Option<usize>,
    #[arg(long)]
    pub p_fp_min: Option<f64>,
    #[arg(long)]
    pub p_fp_max: Option<f64>,
    #[arg(long)]
    pub p_fp_points: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: PdRunArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Gap above which an instance is marked as failing.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub bp: BpArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub n_pop: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, value_parser = ["bernoulli", "exact"])]
    pub sampling: Option<String>,
}

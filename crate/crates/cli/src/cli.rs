use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Entropy-regularized LQ mean-field control: Riccati solver, Gibbs policy
/// iteration, particle simulation and Monte Carlo studies.
///
/// Every run writes its artifacts and a `manifest.json` into the output
/// directory. `mfc rerun <manifest>` reproduces the artifacts byte for byte.
#[derive(Debug, Parser)]
#[command(name = "mfc", version)]
pub struct Cli {
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, env = "MFC_OUT_DIR", default_value = "mfc-out")]
    pub out_dir: PathBuf,

    /// Cap on worker threads. Results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Solve the Riccati system backward and check condition (H).
    Solve(SolveArgs),
    /// Export the closed-form optimal Gaussian policy.
    Policy(SolveArgs),
    /// Simulate the particle system under a Gaussian policy.
    Simulate(SimulateArgs),
    /// Run the inner Gibbs fixed point, or the outer two-layer iteration with `--outer`.
    FixedPoint(FixedPointArgs),
    /// Decision-grid convergence study of the sampled value.
    Convergence(ConvergenceArgs),
    /// Policy improvement check for a (perturbed) optimal policy.
    Improve(ImproveArgs),
    /// HJB residual sweep of the Riccati solution.
    HjbCheck(HjbArgs),
    /// Reproduce a previous run from its manifest.
    #[serde(skip)]
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Policy(_) => "policy",
            Command::Simulate(_) => "simulate",
            Command::FixedPoint(_) => "fixed-point",
            Command::Convergence(_) => "convergence",
            Command::Improve(_) => "improve",
            Command::HjbCheck(_) => "hjb-check",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn model_args(&self) -> Option<&ModelArgs> {
        match self {
            Command::Solve(a) | Command::Policy(a) => Some(&a.model),
            Command::Simulate(a) => Some(&a.model),
            Command::FixedPoint(a) => Some(&a.model),
            Command::Convergence(a) => Some(&a.model),
            Command::Improve(a) => Some(&a.model),
            Command::HjbCheck(a) => Some(&a.model),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ModelArgs {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,

    /// Backward ODE steps on [0, T].
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,

    /// Margin in the strict condition R <= -delta I.
    #[arg(long, default_value_t = 1e-6)]
    pub delta: f64,

    /// Continue when condition (H) fails instead of exiting.
    #[arg(long)]
    pub force: bool,
}

/// Gaussian initial law `N(mean, var · I)`; `var = 0` gives a point mass.
#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct InitArgs {
    /// Initial mean, comma separated (defaults to the origin).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub init_mean: Vec<f64>,

    /// Initial variance per component.
    #[arg(long, default_value_t = 1.0)]
    pub init_var: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Closed-form optimal policy of the model.
    Optimal,
    /// `K = K̄ = K₀ = 0`, `Σ = I`.
    OpenLoop,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct PolicyArgs {
    /// Which Gaussian policy to run.
    #[arg(long, value_enum, default_value_t = PolicyKind::Optimal)]
    pub policy: PolicyKind,

    /// Multiplies the policy covariance.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_scale: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    Sampled,
    Relaxed,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub init: InitArgs,

    /// Number of particles N.
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,

    /// Euler steps of the particle system.
    #[arg(long, default_value_t = 100)]
    pub sim_steps: usize,

    /// Number of uniform decision intervals (defaults to `--sim-steps`).
    #[arg(long, conflicts_with = "decision_times")]
    pub decision_steps: Option<usize>,

    /// Explicit decision times, comma separated; must include 0.
    #[arg(long, value_delimiter = ',')]
    pub decision_times: Vec<f64>,

    /// Sampled actions frozen between decision times, or relaxed moment dynamics.
    #[arg(long, value_enum, default_value_t = DynamicsKind::Sampled)]
    pub dynamics: DynamicsKind,

    /// Seed of the counter-based noise streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Replication index within the seed.
    #[arg(long, default_value_t = 0)]
    pub replication: u64,

    /// Noise resolution in steps (a multiple of `--sim-steps`).
    #[arg(long)]
    pub base_steps: Option<usize>,

    /// Share the relaxed auxiliary noise B̄ across particles.
    #[arg(long)]
    pub aux_common: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct FixedPointArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub init: InitArgs,

    /// Time at which the inner map is iterated.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,

    /// Action cells per axis.
    #[arg(long, default_value_t = 257)]
    pub cells: usize,

    /// Damping θ in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,

    /// Stopping tolerance on the sup-norm change (inner) or block change (outer).
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,

    /// Inner iteration cap.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,

    /// Gauss–Hermite nodes per state axis.
    #[arg(long, default_value_t = 20)]
    pub state_order: usize,

    /// Gauss–Hermite nodes per action axis.
    #[arg(long, default_value_t = 20)]
    pub action_order: usize,

    /// Grid half-width in policy standard deviations.
    #[arg(long, default_value_t = 6.0)]
    pub radius: f64,

    /// Run the outer evaluate-and-improve loop instead, starting from the
    /// open-loop policy.
    #[arg(long)]
    pub outer: bool,

    /// Outer iteration cap.
    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub init: InitArgs,

    /// Decision spacings, comma separated; each must divide the horizon.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.1, 0.05, 0.025])]
    pub grids: Vec<f64>,

    /// Number of particles N.
    #[arg(long, default_value_t = 10_000)]
    pub particles: usize,

    /// Independent replications per grid (common random numbers across grids).
    #[arg(long, default_value_t = 100)]
    pub replications: usize,

    /// Seed of the noise streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Required fitted slope.
    #[arg(long, default_value_t = 0.4)]
    pub min_slope: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ImproveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub init: InitArgs,

    /// Half-width of the uniform perturbation applied to the optimal policy.
    #[arg(long, default_value_t = 0.0)]
    pub perturb: f64,

    /// Seed of the perturbation and of the Monte Carlo noise streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also estimate both values by Monte Carlo with common random numbers.
    #[arg(long)]
    pub mc: bool,

    /// Number of particles N for the Monte Carlo check.
    #[arg(long, default_value_t = 2000)]
    pub particles: usize,

    /// Paired replications for the Monte Carlo check.
    #[arg(long, default_value_t = 50)]
    pub replications: usize,

    /// Euler steps (and decision intervals) for the Monte Carlo check.
    #[arg(long, default_value_t = 1000)]
    pub sim_steps: usize,

    /// Dynamics used by the Monte Carlo check.
    #[arg(long, value_enum, default_value_t = DynamicsKind::Relaxed)]
    pub dynamics: DynamicsKind,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct HjbArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub init: InitArgs,

    /// Times of the sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
    pub times: Vec<f64>,

    #[arg(long, default_value_t = 20)]
    pub state_order: usize,

    #[arg(long, default_value_t = 20)]
    pub action_order: usize,

    /// Added to Λ at every node before the residual is evaluated.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub perturb_lambda: f64,

    /// Largest admissible |residual|.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct RerunArgs {
    /// Manifest written by a previous run.
    pub manifest: PathBuf,
}

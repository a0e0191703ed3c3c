use std::path::PathBuf;

use ccaboot::alignment::AlignmentStrategy;
use ccaboot::bootstrap::IntervalKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ccaboot", version, about = "Bootstrap confidence intervals for canonical directions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo evaluation of interval methods on simulated designs.
    Simulate(SimulateArgs),
    /// Intervals for the canonical directions of a data set.
    Infer(InferArgs),
    /// Merge summary tables from simulate runs.
    Report(ReportArgs),
}

/// Flags shared by every subcommand. They take precedence over the config file.
#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "n-boots")]
    pub n_boots: Option<usize>,
    /// identity, signflip, hungarian or procrustes.
    #[arg(long)]
    pub strategy: Option<AlignmentStrategy>,
    /// percentile or normal.
    #[arg(long)]
    pub interval: Option<IntervalKind>,
    /// Existing output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Monte-Carlo replicates per design.
    #[arg(long = "n-reps")]
    pub n_reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV matrix of the X variables (rows are observations).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// CSV matrix of the Y variables.
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// CSV matrix of nuisance covariates, including an intercept column.
    #[arg(long)]
    pub w: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Summary CSV files written by `simulate`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Also write a plain-text summary.
    #[arg(long)]
    pub text: bool,
}

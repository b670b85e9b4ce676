use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pisa", version, about = "Prime-sample ranking, reweighting and evaluation on synthetic detection scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic train and eval scenes.
    Generate(RunArgs),
    /// Train a head and evaluate it on held-out scenes.
    Train(RunArgs),
    /// Dump IoU-HLR and Score-HLR of the first eval mini-batch as CSV.
    Rank(RunArgs),
    /// COCO-style mAP of a detection file against a ground-truth file.
    Eval(EvalArgs),
    /// Budgeted score boost of top IoU-HLR positives versus random positives.
    Simulate(SimulateArgs),
    /// Sample distribution tables and charts for a trained head.
    Report(RunArgs),
    /// Train every row of a grid, reusing finished runs.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON experiment config; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output root; overrides PISA_OUT_ROOT.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// JSON Lines file with detections per image.
    #[arg(long)]
    pub dets: PathBuf,
    /// JSON Lines file with ground truths per image.
    #[arg(long)]
    pub gts: PathBuf,
    /// Config supplying `eval.thresholds`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Positives boosted per scene.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Fraction of the positives' classification loss to remove.
    #[arg(long, default_value_t = 0.10)]
    pub budget: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// `hyper`, `strategy`, `components`, or a JSON grid file.
    #[arg(long, default_value = "hyper")]
    pub grid: String,
    /// Number of consecutive seeds per row, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

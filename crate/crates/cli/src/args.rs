use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "sacn",
    version,
    about = "Structure-aware consensus network for node classification"
)]
pub struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train over several seeds and write a report, metrics and checkpoints.
    Train(TrainArgs),
    /// Compare the full objective against its two reduced variants.
    Ablate(AblateArgs),
    /// Write a stochastic-block-model bundle.
    Generate(GenerateArgs),
    /// Compare every loss term against finite differences on a built-in graph.
    Gradcheck(GradcheckArgs),
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be non-negative"))
    }
}

/// Training settings shared by `train` and `ablate`. Each flag overrides one
/// field of the defaults file.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Bundle directory (meta.json, edges.tsv, features.tsv, labels.tsv).
    #[arg(long)]
    pub bundle: PathBuf,
    /// TOML file with training defaults (see configs/).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of runs; seeds are first-seed, first-seed + 1, ...
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Draw a fresh class-balanced split per seed at this label rate instead
    /// of using the bundle's split.
    #[arg(long, value_parser = probability)]
    pub label_rate: Option<f64>,
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Feature smoothing steps.
    #[arg(long = "c")]
    pub filter_strength: Option<usize>,
    #[arg(long, value_parser = non_negative)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = non_negative)]
    pub alpha1: Option<f64>,
    #[arg(long, value_parser = non_negative)]
    pub alpha2: Option<f64>,
    #[arg(long, value_parser = probability)]
    pub mask_rate: Option<f64>,
    #[arg(long, value_parser = positive_f64)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = non_negative)]
    pub weight_decay: Option<f64>,
    #[arg(long, value_parser = probability)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs_pretrain: Option<usize>,
    #[arg(long)]
    pub epochs_max: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_parser = probability)]
    pub p_in: f64,
    #[arg(long, value_parser = probability)]
    pub p_out: f64,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    /// Probability of flipping each prototype feature bit.
    #[arg(long, value_parser = probability, default_value_t = 0.1)]
    pub flip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label rate of the split stored with the bundle.
    #[arg(long, value_parser = probability, default_value_t = 0.1)]
    pub label_rate: f64,
    /// Validation nodes in the stored split (default: a fifth of the nodes).
    #[arg(long)]
    pub val_size: Option<usize>,
    /// Test nodes in the stored split (default: every remaining node).
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long, value_parser = positive_f64, default_value_t = sacn::fixture::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

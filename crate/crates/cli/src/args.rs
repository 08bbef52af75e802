use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "influence-audit",
    version,
    about = "Label-error audits for group disparity metrics"
)]
pub struct Cli {
    /// Worker thread count (output does not depend on it).
    #[arg(long, global = true, env = "INFLUENCE_AUDIT_THREADS")]
    pub threads: Option<usize>,

    /// JSON config for the subcommand (or a report whose embedded config should be replayed).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-group task as train/val/test CSVs plus a manifest.
    Generate(GenerateArgs),
    /// Fit ridge logistic regression and write the model report.
    Train(TrainArgs),
    /// Per-group metric report, optionally with per-training-point influence scores.
    Audit(AuditArgs),
    /// Label-flip sensitivity sweep at test time or train time.
    Sensitivity(SensitivityArgs),
    /// Rank training points by suspected label error.
    Rank(RankArgs),
    /// Relabel high-scoring training points and finetune or retrain.
    Relabel(RelabelArgs),
    /// Compare influence estimates with brute-force retraining.
    OracleCheck(OracleCheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct ColumnArgs {
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub group_column: Option<String>,
    /// Comma-separated feature columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub feature_columns: Option<Vec<String>>,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct MetricArgs {
    /// ece, brier, gfpr, gfnr or error_rate.
    #[arg(long)]
    pub metric: Option<String>,
    /// Bin count for ECE.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Restrict the audited metric to one group.
    #[arg(long)]
    pub group: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Dataset the metric is evaluated on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training data (needed for scores, or to fit when no model is given).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Model report written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// up_params, up_disparity or pert_label_disparity.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Write per-training-point scores to this CSV.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// test or train.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Comma-separated flip fractions.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Number of flip seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed_offset: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat CSV (default: the report path with a .csv extension).
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// if-disparity, if-disparity-label, if-norm, loss, cv-<k>, logit-margin.
    #[arg(long)]
    pub method: Option<String>,
    /// Flip this fraction of training labels first and score against them.
    #[arg(long)]
    pub flip_fraction: Option<f64>,
    #[arg(long)]
    pub flip_seed: Option<u64>,
    /// Comma-separated precision cutoffs.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub cv_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RelabelArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long)]
    pub top_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Retrain from scratch on the relabeled set instead of finetuning.
    #[arg(long)]
    pub full_retrain: bool,
    /// all or audit-group.
    #[arg(long)]
    pub pool: Option<String>,
    #[arg(long)]
    pub flip_fraction: Option<f64>,
    #[arg(long)]
    pub flip_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Audit-set point used as the loss target.
    #[arg(long)]
    pub test_index: Option<usize>,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Exit nonzero when the disparity rank correlation falls below this.
    #[arg(long)]
    pub min_spearman: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

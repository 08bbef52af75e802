//! Label-error auditing for group disparity metrics of ridge logistic regression.
//!
//! The crate covers four layers:
//!
//! * [`data`]: CSV ingestion, seeded splits, label flipping and a synthetic
//!   two-group benchmark task.
//! * [`model`]: regularized logistic regression with exact gradient/Hessian,
//!   a Newton trainer and a gradient-descent finetuner.
//! * [`metrics`]: per-group ECE, Brier, generalized FPR/FNR, error rate and
//!   their parameter gradients.
//! * [`influence`]: inverse-Hessian influence estimators (parameter, loss,
//!   label-perturbation and disparity variants) together with brute-force
//!   retraining oracles.
//!
//! [`audit`] strings these together into the experiment procedures:
//! sensitivity sweeps, mislabel ranking and relabel-and-finetune.

pub mod audit;
pub mod data;
pub mod error;
pub mod influence;
pub mod metrics;
pub mod model;
pub mod stats;

pub use audit::{
    default_grid, precision_at_k, rank_training_points, relabel_and_finetune,
    test_time_sensitivity, test_time_sensitivity_scoped, train_time_sensitivity, RankConfig,
    RankMethod, RankingResult, RelabelConfig, RelabelOutcome, RelabelPool, SensitivityCell,
    SensitivityMode, SensitivityReport, SummaryRow, DEFAULT_PRECISION_K, DEFAULT_TOP_FRACTION,
};
pub use data::{
    flip_labels, load_csv, make_synthetic_group_task, split, CsvSchema, Dataset, FlipRecord,
    FlipScope, Sample, SyntheticTask,
};
pub use error::{AuditError, Result};
pub use influence::{
    build_context, influence_pert_label_disparity, influence_pert_label_loss,
    influence_up_disparity, influence_up_loss, influence_up_params, label_flip_oracle, loo_oracle,
    score_training_set, write_scores_csv, Adjoint, Estimator, InfluenceScore, RetrainOracle,
    ScoreTarget, SolveContext, SolverOptions,
};
pub use metrics::{
    brier, ece, error_rate, gfnr, gfpr, grad_disparity, group_disparity, GroupReport, Metric,
    MetricKind,
};
pub use model::{
    finetune, grad_label_grad_theta, grad_risk, hessian_risk, predict_all, predict_proba, risk,
    train, train_with_summary, ModelParams, TrainConfig, TrainSummary,
};

/// Version tag embedded in every serialized report.
pub const SCHEMA_VERSION: u32 = 1;

//! Experiment procedures built on the model, metric and influence layers.

mod ranking;
mod relabel;
mod sensitivity;

pub use ranking::{
    precision_at_k, rank_training_points, RankConfig, RankMethod, RankingResult,
    DEFAULT_PRECISION_K,
};
pub use relabel::{
    relabel_and_finetune, RelabelConfig, RelabelOutcome, RelabelPool, DEFAULT_TOP_FRACTION,
};
pub use sensitivity::{
    default_grid, test_time_sensitivity, test_time_sensitivity_scoped, train_time_sensitivity,
    SensitivityCell, SensitivityMode, SensitivityReport, SummaryRow,
};

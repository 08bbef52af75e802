use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::influence::{build_context, Adjoint};
use crate::metrics::{group_disparity, GroupReport, MetricKind};
use crate::model::{
    finetune, train, ModelParams, TrainConfig, DEFAULT_FINETUNE_EPOCHS, DEFAULT_LEARNING_RATE,
};

pub const DEFAULT_TOP_FRACTION: f64 = 0.20;

/// Which training points are eligible for relabeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelPool {
    #[default]
    All,
    /// Only points from the metric's audited group (requires a group filter).
    AuditGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelabelConfig {
    pub train: TrainConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Retrain from scratch on the relabeled set instead of finetuning.
    pub full_retrain: bool,
    pub pool: RelabelPool,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            epochs: DEFAULT_FINETUNE_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            full_retrain: false,
            pool: RelabelPool::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelOutcome {
    pub before: GroupReport,
    pub after: GroupReport,
    /// Metric value on the (group-restricted) audit set.
    pub audited_before: f64,
    pub audited_after: f64,
    /// Relabeled training indices, highest score first.
    pub relabeled: Vec<usize>,
    /// `round(top_fraction * pool size)`.
    pub budget: usize,
    /// Pool points with a strictly positive canonical score.
    pub positive_candidates: usize,
    pub model: ModelParams,
    pub full_retrain: bool,
}

/// Flips the labels of the highest positive canonical-score points and updates the model.
///
/// At most `round(top_fraction * pool)` points are relabeled; points with a
/// canonical score `<= 0` never are. With no positive candidates the model is
/// returned unchanged.
pub fn relabel_and_finetune(
    model: &ModelParams,
    train_set: &Dataset,
    audit_set: &Dataset,
    metric: &MetricKind,
    top_fraction: f64,
    config: &RelabelConfig,
) -> Result<RelabelOutcome> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(AuditError::Domain(format!(
            "top fraction {top_fraction} outside (0, 1]"
        )));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(AuditError::Domain(format!(
            "learning rate {} must be finite and >= 0",
            config.learning_rate
        )));
    }
    metric.validate()?;
    let pool: Vec<usize> = match config.pool {
        RelabelPool::All => (0..train_set.len()).collect(),
        RelabelPool::AuditGroup => {
            let g = metric.group_filter.ok_or_else(|| {
                AuditError::Domain("audit-group pool needs a metric group filter".into())
            })?;
            (0..train_set.len())
                .filter(|&i| train_set.samples()[i].group == g)
                .collect()
        }
    };
    let budget = (top_fraction * pool.len() as f64).round() as usize;

    let ctx = build_context(model, train_set)?;
    let adjoint = Adjoint::for_disparity(&ctx, model, audit_set, metric)?;
    let mut scored: Vec<(usize, f64)> = pool
        .iter()
        .map(|&i| {
            adjoint
                .canonical(model, &train_set.samples()[i])
                .map(|s| (i, s))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .collect();
    let positive_candidates = scored.len();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let relabeled: Vec<usize> = scored.into_iter().take(budget).map(|(i, _)| i).collect();

    let updated = if relabeled.is_empty() {
        model.clone()
    } else {
        let relabeled_set = train_set.with_flipped(&relabeled);
        if config.full_retrain {
            train(&relabeled_set, &config.train)?
        } else {
            finetune(model, &relabeled_set, config.epochs, config.learning_rate)?
        }
    };
    log::info!(
        "relabeled {} of {} positive candidates (budget {budget})",
        relabeled.len(),
        positive_candidates
    );

    Ok(RelabelOutcome {
        before: group_disparity(model, audit_set, metric)?,
        after: group_disparity(&updated, audit_set, metric)?,
        audited_before: metric.value(model, audit_set)?,
        audited_after: metric.value(&updated, audit_set)?,
        relabeled,
        budget,
        positive_candidates,
        model: updated,
        full_retrain: config.full_retrain,
    })
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FlipRecord};
use crate::error::{AuditError, Result};
use crate::influence::{score_training_set, Estimator, ScoreTarget, SolveContext};
use crate::metrics::MetricKind;
use crate::model::{predict_all, sample_loss, train, ModelParams, TrainConfig};

pub const DEFAULT_PRECISION_K: usize = 50;

/// Strategies for ordering training points by suspected label error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    /// `|I_up,disparity|`.
    IfDisparity,
    /// Canonical label-perturbation disparity score (signed).
    IfDisparityLabel,
    /// `||I_up,params||₂`.
    IfNorm,
    /// Per-sample training loss.
    Loss,
    /// Out-of-fold probability of the observed label, lowest first.
    CvUncertainty { folds: usize },
    /// `|θ·x̃|`, lowest first.
    LogitMargin,
}

impl RankMethod {
    pub fn all() -> Vec<RankMethod> {
        vec![
            RankMethod::IfDisparity,
            RankMethod::IfDisparityLabel,
            RankMethod::IfNorm,
            RankMethod::Loss,
            RankMethod::CvUncertainty { folds: 5 },
            RankMethod::CvUncertainty { folds: 1 },
            RankMethod::LogitMargin,
        ]
    }
}

impl fmt::Display for RankMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankMethod::IfDisparity => f.write_str("if-disparity"),
            RankMethod::IfDisparityLabel => f.write_str("if-disparity-label"),
            RankMethod::IfNorm => f.write_str("if-norm"),
            RankMethod::Loss => f.write_str("loss"),
            RankMethod::CvUncertainty { folds } => write!(f, "cv-{folds}"),
            RankMethod::LogitMargin => f.write_str("logit-margin"),
        }
    }
}

impl FromStr for RankMethod {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let method = match key.as_str() {
            "if-disparity" | "if-calib" => RankMethod::IfDisparity,
            "if-disparity-label" | "if-calib-label" => RankMethod::IfDisparityLabel,
            "if-norm" => RankMethod::IfNorm,
            "loss" => RankMethod::Loss,
            "cv" | "cv-uncertainty" => RankMethod::CvUncertainty { folds: 5 },
            "logit" | "logit-margin" => RankMethod::LogitMargin,
            other => {
                let folds = other
                    .strip_prefix("cv-uncertainty-")
                    .or_else(|| other.strip_prefix("cv-"))
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1);
                match folds {
                    Some(folds) => RankMethod::CvUncertainty { folds },
                    None => return Err(AuditError::UnknownMethod(s.to_string())),
                }
            }
        };
        Ok(method)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    /// Used by the cross-validation baseline's refits.
    pub train: TrainConfig,
    /// Fold assignment seed for the cross-validation baseline.
    pub cv_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub method: String,
    /// Training indices, highest priority first.
    pub order: Vec<usize>,
    /// Priority score per training index (higher ranks earlier).
    pub scores: Vec<f64>,
    pub ground_truth: Option<Vec<usize>>,
    pub precision_at_k: BTreeMap<usize, f64>,
}

impl RankingResult {
    fn from_scores(method: RankMethod, scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self {
            method: method.to_string(),
            order,
            scores,
            ground_truth: None,
            precision_at_k: BTreeMap::new(),
        }
    }

    /// Attaches the known corrupted set and precision at each `k`.
    pub fn evaluate(&mut self, flips: &FlipRecord, ks: &[usize]) -> Result<()> {
        for &k in ks {
            let p = precision_at_k(&self.order, &flips.flipped_indices, k)?;
            self.precision_at_k.insert(k, p);
        }
        self.ground_truth = Some(flips.flipped_indices.clone());
        Ok(())
    }
}

/// `|top-k ∩ flipped| / k`.
pub fn precision_at_k(order: &[usize], flipped: &[usize], k: usize) -> Result<f64> {
    if k == 0 || k > order.len() {
        return Err(AuditError::Domain(format!(
            "k = {k} outside 1..={}",
            order.len()
        )));
    }
    let flipped: BTreeSet<usize> = flipped.iter().copied().collect();
    let hits = order[..k].iter().filter(|i| flipped.contains(i)).count();
    Ok(hits as f64 / k as f64)
}

/// Orders training points by one of the [`RankMethod`] strategies.
///
/// `ctx` must be the solve context of `model` on `train`; `audit_set` and
/// `metric` are used by the disparity-influence methods only.
pub fn rank_training_points(
    method: RankMethod,
    model: &ModelParams,
    ctx: &SolveContext,
    train_set: &Dataset,
    audit_set: &Dataset,
    metric: &MetricKind,
    config: &RankConfig,
) -> Result<RankingResult> {
    let disparity = ScoreTarget::Disparity { audit_set, metric };
    let scores: Vec<f64> = match method {
        RankMethod::IfDisparity => {
            score_training_set(Estimator::UpDisparity, ctx, model, train_set, disparity)?
                .into_iter()
                .map(|s| s.value.abs())
                .collect()
        }
        RankMethod::IfDisparityLabel => score_training_set(
            Estimator::PertLabelDisparity,
            ctx,
            model,
            train_set,
            disparity,
        )?
        .into_iter()
        .map(|s| s.canonical)
        .collect(),
        RankMethod::IfNorm => score_training_set(
            Estimator::UpParams,
            ctx,
            model,
            train_set,
            ScoreTarget::Parameters,
        )?
        .into_iter()
        .map(|s| s.value)
        .collect(),
        RankMethod::Loss => train_set
            .samples()
            .iter()
            .map(|z| sample_loss(model, z))
            .collect::<Result<_>>()?,
        RankMethod::CvUncertainty { folds } => {
            out_of_fold_label_probability(train_set, folds, config)?
                .into_iter()
                .map(|p| -p)
                .collect()
        }
        RankMethod::LogitMargin => train_set
            .samples()
            .iter()
            .map(|z| model.logit(&z.features).map(|v| -v.abs()))
            .collect::<Result<_>>()?,
    };
    Ok(RankingResult::from_scores(method, scores))
}

/// Probability each point's own label receives from a model that did not see it.
///
/// `folds = 1` is a single 50/50 holdout: each half is scored by a refit on the other half.
fn out_of_fold_label_probability(
    data: &Dataset,
    folds: usize,
    config: &RankConfig,
) -> Result<Vec<f64>> {
    if folds == 0 {
        return Err(AuditError::Domain(
            "cross-validation needs at least one fold".into(),
        ));
    }
    let shards = folds.max(2);
    if data.len() < shards {
        return Err(AuditError::Size(format!(
            "{} samples cannot fill {shards} folds",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.cv_seed));
    let mut fold_of = vec![0usize; data.len()];
    for (pos, &i) in idx.iter().enumerate() {
        fold_of[i] = pos % shards;
    }
    let per_fold: Vec<Vec<(usize, f64)>> = (0..shards)
        .into_par_iter()
        .map(|f| {
            let fit_idx: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != f).collect();
            let held: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == f).collect();
            let model = train(&data.subset(&fit_idx), &config.train)?;
            let probs = predict_all(&model, &data.subset(&held))?;
            Ok(held
                .iter()
                .zip(probs)
                .map(|(&i, p)| {
                    (
                        i,
                        if data.samples()[i].label == 1 {
                            p
                        } else {
                            1.0 - p
                        },
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; data.len()];
    for (i, p) in per_fold.into_iter().flatten() {
        out[i] = p;
    }
    Ok(out)
}

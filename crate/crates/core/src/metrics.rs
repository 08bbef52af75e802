//! Group disparity metrics and their gradients with respect to model parameters.
//!
//! Conventions shared by every metric here:
//!
//! * hard predictions use `ŷ = 1[p > 0.5]`, so `p = 0.5` counts as class 0;
//! * ECE bins are `((m-1)/M, m/M]`, with `p = 0` placed in the first bin;
//!   within a bin the model's mean probability is compared with the observed
//!   frequency of the positive class;
//! * generalized FPR/FNR are undefined (not zero) when the conditioning class
//!   is absent.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::model::{augmented, predict_all, ModelParams};

pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Ece { bins: usize },
    Brier,
    Gfpr,
    Gfnr,
    ErrorRate,
}

impl Metric {
    pub fn ece() -> Self {
        Metric::Ece {
            bins: DEFAULT_ECE_BINS,
        }
    }

    /// Scalar metric value on `(probs, labels)`.
    pub fn evaluate(&self, probs: &[f64], labels: &[u8]) -> Result<f64> {
        match *self {
            Metric::Ece { bins } => ece(probs, labels, bins),
            Metric::Brier => brier(probs, labels),
            Metric::Gfpr => gfpr(probs, labels),
            Metric::Gfnr => gfnr(probs, labels),
            Metric::ErrorRate => error_rate(probs, labels),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ece { bins } if *bins == DEFAULT_ECE_BINS => write!(f, "ece"),
            Metric::Ece { bins } => write!(f, "ece{bins}"),
            Metric::Brier => write!(f, "brier"),
            Metric::Gfpr => write!(f, "gfpr"),
            Metric::Gfnr => write!(f, "gfnr"),
            Metric::ErrorRate => write!(f, "error_rate"),
        }
    }
}

impl FromStr for Metric {
    type Err = AuditError;

    /// Accepts `ece`, `ece<M>` (e.g. `ece15`), `brier`, `gfpr`, `gfnr`, `error_rate`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "ece" => Ok(Metric::ece()),
            "brier" => Ok(Metric::Brier),
            "gfpr" | "fpr" => Ok(Metric::Gfpr),
            "gfnr" | "fnr" => Ok(Metric::Gfnr),
            "error_rate" | "error-rate" | "er" => Ok(Metric::ErrorRate),
            other => match other.strip_prefix("ece").map(str::parse::<usize>) {
                Some(Ok(bins)) if bins >= 1 => Ok(Metric::Ece { bins }),
                _ => Err(AuditError::Domain(format!("unknown metric `{s}`"))),
            },
        }
    }
}

/// A metric plus an optional restriction to one group's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricKind {
    pub metric: Metric,
    pub group_filter: Option<usize>,
}

impl MetricKind {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            group_filter: None,
        }
    }

    pub fn for_group(metric: Metric, group: usize) -> Self {
        Self {
            metric,
            group_filter: Some(group),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Metric::Ece { bins: 0 } = self.metric {
            return Err(AuditError::Domain("ECE needs at least one bin".into()));
        }
        Ok(())
    }

    /// The audited subset of `data`.
    pub fn restrict(&self, data: &Dataset) -> Dataset {
        match self.group_filter {
            Some(g) => data.filter_group(g),
            None => data.clone(),
        }
    }

    /// Metric value of `model` on the (group-restricted) data.
    pub fn value(&self, model: &ModelParams, data: &Dataset) -> Result<f64> {
        let audit = self.restrict(data);
        let probs = predict_all(model, &audit)?;
        self.metric.evaluate(&probs, &audit.labels())
    }
}

impl Default for MetricKind {
    fn default() -> Self {
        Self::new(Metric::Brier)
    }
}

fn check_inputs(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(AuditError::DimensionMismatch {
            expected: probs.len(),
            actual: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(AuditError::Domain("metric of an empty sample".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(AuditError::Domain(
            "probabilities must lie in [0, 1]".into(),
        ));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(AuditError::Domain("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Bin index in `0..bins` for interval `((m-1)/M, m/M]`, with 0 in the first bin.
pub fn ece_bin(p: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut k = (p * m).ceil() as usize;
    // p*M can land one ulp above an exact edge
    if k > 1 && p <= (k - 1) as f64 / m {
        k -= 1;
    }
    k.clamp(1, bins) - 1
}

/// Expected calibration error with `bins` equal-width bins:
/// `Σ_m (|B_m|/n) |mean p(B_m) - mean y(B_m)|`.
pub fn ece(probs: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    check_inputs(probs, labels)?;
    if bins == 0 {
        return Err(AuditError::Domain("ECE needs at least one bin".into()));
    }
    let stats = bin_stats(probs, labels, bins);
    let n = probs.len() as f64;
    Ok(stats
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.count as f64 / n) * (b.conf() - b.freq()).abs())
        .sum())
}

#[derive(Debug, Clone, Copy, Default)]
struct BinStat {
    count: usize,
    prob_sum: f64,
    pos: usize,
}

impl BinStat {
    fn conf(&self) -> f64 {
        self.prob_sum / self.count as f64
    }
    fn freq(&self) -> f64 {
        self.pos as f64 / self.count as f64
    }
}

fn bin_stats(probs: &[f64], labels: &[u8], bins: usize) -> Vec<BinStat> {
    let mut stats = vec![BinStat::default(); bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = &mut stats[ece_bin(p, bins)];
        b.count += 1;
        b.prob_sum += p;
        b.pos += usize::from(y);
    }
    stats
}

/// Mean squared error `(p - y)²`.
pub fn brier(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| (p - f64::from(y)).powi(2))
        .sum();
    Ok(s / probs.len() as f64)
}

/// Mean predicted probability over negatives.
pub fn gfpr(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(probs, labels)?;
    conditional_mean(probs, labels, 0, |p| p).ok_or_else(|| {
        AuditError::UndefinedMetric("generalized FPR needs at least one negative".into())
    })
}

/// Mean of `1 - p` over positives.
pub fn gfnr(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(probs, labels)?;
    conditional_mean(probs, labels, 1, |p| 1.0 - p).ok_or_else(|| {
        AuditError::UndefinedMetric("generalized FNR needs at least one positive".into())
    })
}

fn conditional_mean(
    probs: &[f64],
    labels: &[u8],
    class: u8,
    f: impl Fn(f64) -> f64,
) -> Option<f64> {
    let (sum, count) = probs
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == class)
        .fold((0.0, 0usize), |(s, c), (&p, _)| (s + f(p), c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Fraction misclassified at threshold 0.5.
pub fn error_rate(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let wrong = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| u8::from(p > 0.5) != y)
        .count();
    Ok(wrong as f64 / probs.len() as f64)
}

/// Per-group metric values of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub metric: String,
    pub per_group: BTreeMap<usize, f64>,
    pub group_sizes: BTreeMap<usize, usize>,
    pub majority: usize,
    pub minority: usize,
    pub undefined_groups: Vec<usize>,
}

impl GroupReport {
    pub fn get(&self, group: usize) -> Option<f64> {
        self.per_group.get(&group).copied()
    }
}

/// (majority, minority) group ids by count; ties go to the lower id.
pub fn majority_minority(counts: &BTreeMap<usize, usize>) -> Option<(usize, usize)> {
    let mut it = counts.iter();
    let (&first, &c0) = it.next()?;
    let (mut maj, mut maj_c, mut min, mut min_c) = (first, c0, first, c0);
    for (&g, &c) in it {
        if c > maj_c {
            maj = g;
            maj_c = c;
        }
        if c < min_c {
            min = g;
            min_c = c;
        }
    }
    Some((maj, min))
}

/// Evaluates `metric` on every group of `data` separately.
///
/// The kind's `group_filter` is ignored; every group is reported.
pub fn group_disparity(
    model: &ModelParams,
    data: &Dataset,
    metric: &MetricKind,
) -> Result<GroupReport> {
    metric.validate()?;
    let probs = predict_all(model, data)?;
    let counts = data.group_counts();
    let (majority, minority) = majority_minority(&counts)
        .ok_or_else(|| AuditError::Domain("group report of an empty dataset".into()))?;
    let mut per_group = BTreeMap::new();
    let mut undefined_groups = Vec::new();
    for &g in counts.keys() {
        let (p, y): (Vec<f64>, Vec<u8>) = data
            .samples()
            .iter()
            .zip(&probs)
            .filter(|(s, _)| s.group == g)
            .map(|(s, &p)| (p, s.label))
            .unzip();
        match metric.metric.evaluate(&p, &y) {
            Ok(v) => {
                per_group.insert(g, v);
            }
            Err(AuditError::UndefinedMetric(_)) => undefined_groups.push(g),
            Err(e) => return Err(e),
        }
    }
    Ok(GroupReport {
        metric: metric.metric.to_string(),
        per_group,
        group_sizes: counts,
        majority,
        minority,
        undefined_groups,
    })
}

/// Gradient of the (group-restricted) metric with respect to `[w, b]`.
///
/// ECE is differentiated with bin memberships and per-bin label frequencies
/// held fixed; only the mean confidence of each bin moves. Error rate is
/// piecewise constant, so its gradient is the zero vector.
pub fn grad_disparity(
    model: &ModelParams,
    data: &Dataset,
    metric: &MetricKind,
) -> Result<DVector<f64>> {
    metric.validate()?;
    let audit = metric.restrict(data);
    let probs = predict_all(model, &audit)?;
    let labels = audit.labels();
    // surfaces empty / undefined cases with the scalar metric's error
    metric.metric.evaluate(&probs, &labels)?;
    let k = model.param_dim();
    let n = audit.len() as f64;
    let mut g = DVector::zeros(k);
    let add = |g: &mut DVector<f64>, i: usize, coef: f64| {
        let x = augmented(&audit.samples()[i].features);
        g.axpy(coef, &x, 1.0);
    };
    match metric.metric {
        Metric::Brier => {
            for (i, (&p, &y)) in probs.iter().zip(&labels).enumerate() {
                add(&mut g, i, 2.0 / n * (p - f64::from(y)) * p * (1.0 - p));
            }
        }
        Metric::Gfpr | Metric::Gfnr => {
            let (class, sign) = if metric.metric == Metric::Gfpr {
                (0u8, 1.0)
            } else {
                (1u8, -1.0)
            };
            let count = labels.iter().filter(|&&y| y == class).count() as f64;
            for (i, (&p, &y)) in probs.iter().zip(&labels).enumerate() {
                if y == class {
                    add(&mut g, i, sign * p * (1.0 - p) / count);
                }
            }
        }
        Metric::Ece { bins } => {
            let stats = bin_stats(&probs, &labels, bins);
            for (i, &p) in probs.iter().enumerate() {
                let b = &stats[ece_bin(p, bins)];
                let gap = b.conf() - b.freq();
                if gap != 0.0 {
                    // (|B|/n) sign(gap) (1/|B|) Σ_B p(1-p) x̃  ==  (1/n) sign(gap) Σ_B p(1-p) x̃
                    add(&mut g, i, gap.signum() * p * (1.0 - p) / n);
                }
            }
        }
        Metric::ErrorRate => {
            log::warn!("error rate is piecewise constant; its parameter gradient is zero almost everywhere");
        }
    }
    Ok(g)
}

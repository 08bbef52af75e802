use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{flip_labels, Dataset, FlipScope};
use crate::error::{AuditError, Result};
use crate::metrics::{group_disparity, GroupReport, MetricKind};
use crate::model::{train, ModelParams, TrainConfig};
use crate::stats::{mean, std_dev};

/// Flip fractions from 0 to 30% in steps of 5 points.
pub fn default_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    TestTime,
    TrainTime,
}

/// Metric values for one (fraction, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub fraction: f64,
    pub seed: u64,
    pub values: BTreeMap<usize, f64>,
    /// `100 (m - m_0) / m_0`; groups with `m_0 = 0` or undefined values are absent.
    pub percent_change: BTreeMap<usize, f64>,
    /// Groups whose percent change could not be formed.
    pub flagged_groups: Vec<usize>,
    /// Set when the cell could not be computed (e.g. retraining failed).
    pub error: Option<String>,
}

impl SensitivityCell {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

/// Per (fraction, group) aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub fraction: f64,
    pub group: usize,
    pub seeds: usize,
    pub mean_percent_change: f64,
    pub std_percent_change: f64,
    pub mean_abs_percent_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub mode: SensitivityMode,
    pub metric: MetricKind,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub baseline: GroupReport,
    pub majority: usize,
    pub minority: usize,
    /// Grid-major, seed-minor order.
    pub cells: Vec<SensitivityCell>,
    pub summary: Vec<SummaryRow>,
}

impl SensitivityReport {
    pub fn summary_for(&self, fraction: f64, group: usize) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.fraction == fraction && r.group == group)
    }

    /// One CSV row per group × fraction × seed.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("mode,metric,fraction,seed,group,baseline,value,percent_change\n");
        let mode = match self.mode {
            SensitivityMode::TestTime => "test",
            SensitivityMode::TrainTime => "train",
        };
        for cell in &self.cells {
            for &g in self.baseline.group_sizes.keys() {
                let fmt = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{mode},{},{},{},{g},{},{},{}\n",
                    self.metric.metric,
                    cell.fraction,
                    cell.seed,
                    fmt(self.baseline.per_group.get(&g)),
                    fmt(cell.values.get(&g)),
                    fmt(cell.percent_change.get(&g)),
                ));
            }
        }
        out
    }
}

fn validate(fractions: &[f64], seeds: &[u64], metric: &MetricKind) -> Result<()> {
    metric.validate()?;
    if fractions.is_empty() || seeds.is_empty() {
        return Err(AuditError::Domain(
            "sensitivity sweep needs at least one fraction and one seed".into(),
        ));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(AuditError::Domain(format!(
            "flip fraction {f} outside [0, 1]"
        )));
    }
    Ok(())
}

fn make_cell(
    fraction: f64,
    seed: u64,
    baseline: &GroupReport,
    report: &GroupReport,
) -> SensitivityCell {
    let mut percent_change = BTreeMap::new();
    let mut flagged_groups = Vec::new();
    for &g in baseline.group_sizes.keys() {
        match (baseline.get(g), report.get(g)) {
            (Some(m0), Some(m)) if m0 != 0.0 => {
                percent_change.insert(g, 100.0 * (m - m0) / m0);
            }
            _ => flagged_groups.push(g),
        }
    }
    SensitivityCell {
        fraction,
        seed,
        values: report.per_group.clone(),
        percent_change,
        flagged_groups,
        error: None,
    }
}

fn summarize(grid: &[f64], groups: &[usize], cells: &[SensitivityCell]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &fraction in grid {
        for &group in groups {
            let changes: Vec<f64> = cells
                .iter()
                .filter(|c| c.fraction == fraction)
                .filter_map(|c| c.percent_change.get(&group).copied())
                .collect();
            if changes.is_empty() {
                continue;
            }
            let abs: Vec<f64> = changes.iter().map(|c| c.abs()).collect();
            rows.push(SummaryRow {
                fraction,
                group,
                seeds: changes.len(),
                mean_percent_change: mean(&changes),
                std_percent_change: std_dev(&changes),
                mean_abs_percent_change: mean(&abs),
            });
        }
    }
    rows
}

fn assemble(
    mode: SensitivityMode,
    metric: &MetricKind,
    fractions: &[f64],
    seeds: &[u64],
    baseline: GroupReport,
    cells: Vec<SensitivityCell>,
) -> SensitivityReport {
    let groups: Vec<usize> = baseline.group_sizes.keys().copied().collect();
    let summary = summarize(fractions, &groups, &cells);
    SensitivityReport {
        mode,
        metric: *metric,
        grid: fractions.to_vec(),
        seeds: seeds.to_vec(),
        majority: baseline.majority,
        minority: baseline.minority,
        baseline,
        cells,
        summary,
    }
}

fn grid_jobs(fractions: &[f64], seeds: &[u64]) -> Vec<(f64, u64)> {
    fractions
        .iter()
        .flat_map(|&f| seeds.iter().map(move |&s| (f, s)))
        .collect()
}

/// Fixed model, corrupted test labels (flipped over all test samples).
pub fn test_time_sensitivity(
    model: &ModelParams,
    test: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
    metric: &MetricKind,
) -> Result<SensitivityReport> {
    test_time_sensitivity_scoped(model, test, fractions, seeds, metric, FlipScope::All)
}

/// [`test_time_sensitivity`] with a configurable flip pool.
pub fn test_time_sensitivity_scoped(
    model: &ModelParams,
    test: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
    metric: &MetricKind,
    scope: FlipScope,
) -> Result<SensitivityReport> {
    validate(fractions, seeds, metric)?;
    let baseline = group_disparity(model, test, metric)?;
    let cells = grid_jobs(fractions, seeds)
        .into_par_iter()
        .map(|(fraction, seed)| {
            let (noisy, _) = flip_labels(test, fraction, seed, scope)?;
            let report = group_disparity(model, &noisy, metric)?;
            Ok(make_cell(fraction, seed, &baseline, &report))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(
        SensitivityMode::TestTime,
        metric,
        fractions,
        seeds,
        baseline,
        cells,
    ))
}

/// Corrupted training labels, retrained model, fixed clean test set.
pub fn train_time_sensitivity(
    train_set: &Dataset,
    test: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
    metric: &MetricKind,
    config: &TrainConfig,
) -> Result<SensitivityReport> {
    validate(fractions, seeds, metric)?;
    let clean_model = train(train_set, config)?;
    let baseline = group_disparity(&clean_model, test, metric)?;
    let cells = grid_jobs(fractions, seeds)
        .into_par_iter()
        .map(|(fraction, seed)| {
            let (noisy, _) = flip_labels(train_set, fraction, seed, FlipScope::All)?;
            match train(&noisy, config) {
                Ok(model) => {
                    let report = group_disparity(&model, test, metric)?;
                    Ok(make_cell(fraction, seed, &baseline, &report))
                }
                Err(e @ AuditError::Convergence { .. }) => Ok(SensitivityCell {
                    fraction,
                    seed,
                    values: BTreeMap::new(),
                    percent_change: BTreeMap::new(),
                    flagged_groups: baseline.group_sizes.keys().copied().collect(),
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(
        SensitivityMode::TrainTime,
        metric,
        fractions,
        seeds,
        baseline,
        cells,
    ))
}

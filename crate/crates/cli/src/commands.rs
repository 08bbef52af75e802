use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use influence_audit::stats::spearman;
use influence_audit::{
    build_context, flip_labels, group_disparity, influence_up_disparity, influence_up_loss,
    load_csv, make_synthetic_group_task, rank_training_points, relabel_and_finetune,
    score_training_set, split, test_time_sensitivity, train, train_time_sensitivity,
    write_scores_csv, Adjoint, Dataset, Estimator, FlipRecord, FlipScope, GroupReport, ModelParams,
    RankConfig, RankingResult, RelabelConfig, RelabelOutcome, RetrainOracle, ScoreTarget,
    SensitivityReport, TrainSummary, SCHEMA_VERSION,
};
use serde::Serialize;

use crate::config::{
    AuditConfig, Columns, Fit, GenerateConfig, Mode, OracleCheckConfig, RankCommandConfig,
    RelabelCommandConfig, SensitivityConfig, TrainCommandConfig,
};
use crate::errors::{breach_error, config_error, data_error};

/// Oracle deltas at or below this magnitude are treated as solver noise.
const ORACLE_NOISE: f64 = 1e-8;

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    schema_version: u32,
    command: &'a str,
    config: &'a C,
    result: R,
}

fn write_report<C: Serialize, R: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
    result: R,
) -> anyhow::Result<()> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command,
        config,
        result,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path, columns: &Columns) -> anyhow::Result<Dataset> {
    load_csv(path, &columns.schema()).with_context(|| format!("reading {}", path.display()))
}

/// Accepts a `train` report or a bare serialized [`ModelParams`].
fn read_model(path: &Path) -> anyhow::Result<ModelParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_error(format!("reading {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| data_error(format!("model {}: {e}", path.display())))?;
    let model = value.pointer("/result/model").cloned().unwrap_or(value);
    let params: ModelParams = serde_json::from_value(model)
        .map_err(|e| data_error(format!("model {}: {e}", path.display())))?;
    ModelParams::new(params.weights, params.ridge)
        .map_err(|e| data_error(format!("model {}: {e}", path.display())))
}

fn model_for(
    model: &Option<PathBuf>,
    train_path: &Option<PathBuf>,
    columns: &Columns,
    fit: &Fit,
) -> anyhow::Result<ModelParams> {
    match (model, train_path) {
        (Some(path), _) => read_model(path),
        (None, Some(path)) => Ok(train(&load(path, columns)?, &fit.train_config()?)?),
        (None, None) => Err(config_error("a model or training data is required")),
    }
}

fn max_group_gap(report: &GroupReport) -> Option<f64> {
    let values: Vec<f64> = report.per_group.values().copied().collect();
    let max = values.iter().copied().reduce(f64::max)?;
    let min = values.iter().copied().reduce(f64::min)?;
    Some(max - min)
}

#[derive(Serialize)]
struct SplitSummary {
    file: String,
    size: usize,
    group_counts: BTreeMap<usize, usize>,
}

#[derive(Serialize)]
struct GenerateResult {
    splits: BTreeMap<String, SplitSummary>,
    minority_fraction: f64,
}

pub fn generate(config: &GenerateConfig, out_dir: &Path) -> anyhow::Result<()> {
    // all validation happens before anything touches the filesystem
    let data = make_synthetic_group_task(
        config.n,
        config.dim,
        config.epsilon,
        config.separation,
        config.seed,
    )
    .map_err(|e| config_error(e.to_string()))?;
    let (train_set, val, test) = split(&data, config.seed)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut splits = BTreeMap::new();
    for (name, part) in [("train", &train_set), ("val", &val), ("test", &test)] {
        let file = format!("{name}.csv");
        part.write_csv(out_dir.join(&file))
            .with_context(|| format!("writing {file}"))?;
        splits.insert(
            name.to_string(),
            SplitSummary {
                file,
                size: part.len(),
                group_counts: part.group_counts(),
            },
        );
    }
    let minority = data.group_counts().get(&1).copied().unwrap_or(0);
    let result = GenerateResult {
        splits,
        minority_fraction: minority as f64 / data.len() as f64,
    };
    println!(
        "wrote {} samples to {} (minority fraction {:.3})",
        data.len(),
        out_dir.display(),
        result.minority_fraction
    );
    write_report(&out_dir.join("manifest.json"), "generate", config, result)
}

#[derive(Serialize)]
struct TrainResult {
    model: ModelParams,
    summary: TrainSummary,
    n_train: usize,
    group_counts: BTreeMap<usize, usize>,
}

pub fn train_command(config: &TrainCommandConfig) -> anyhow::Result<()> {
    let path = config.train.as_ref().expect("validated");
    let data = load(path, &config.columns)?;
    let (model, summary) = influence_audit::train_with_summary(&data, &config.fit.train_config()?)?;
    println!(
        "trained on {} samples: {} Newton steps, |grad| {:.2e}",
        data.len(),
        summary.iterations,
        summary.grad_norm
    );
    let result = TrainResult {
        model,
        summary,
        n_train: data.len(),
        group_counts: data.group_counts(),
    };
    write_report(
        config.out.as_ref().expect("validated"),
        "train",
        config,
        result,
    )
}

#[derive(Serialize)]
struct ScoreSummary {
    estimator: Estimator,
    file: PathBuf,
    count: usize,
    /// Highest canonical scores as (train index, score).
    top: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct AuditResult {
    groups: GroupReport,
    audited_value: f64,
    max_group_gap: Option<f64>,
    scores: Option<ScoreSummary>,
}

pub fn audit(config: &AuditConfig) -> anyhow::Result<()> {
    let metric = config.metric.kind()?;
    let data = load(config.data.as_ref().expect("validated"), &config.columns)?;
    let model = model_for(&config.model, &config.train, &config.columns, &config.fit)?;
    let groups = group_disparity(&model, &data, &metric)?;
    let audited_value = metric.value(&model, &data)?;
    let scores = match (&config.scores_out, &config.train) {
        (Some(out), Some(train_path)) => {
            let train_set = load(train_path, &config.columns)?;
            let ctx = build_context(&model, &train_set)?;
            let estimator = config.estimator()?;
            let target = match estimator {
                Estimator::UpParams => ScoreTarget::Parameters,
                _ => ScoreTarget::Disparity {
                    audit_set: &data,
                    metric: &metric,
                },
            };
            let scores = score_training_set(estimator, &ctx, &model, &train_set, target)?;
            write_scores_csv(out, &scores).with_context(|| format!("writing {}", out.display()))?;
            let mut top: Vec<(usize, f64)> = scores
                .iter()
                .map(|s| (s.train_index, s.canonical))
                .collect();
            top.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            top.truncate(10);
            Some(ScoreSummary {
                estimator,
                file: out.clone(),
                count: scores.len(),
                top,
            })
        }
        _ => None,
    };
    for (g, v) in &groups.per_group {
        println!(
            "group {g}: {} = {v:.6} (n = {})",
            groups.metric, groups.group_sizes[g]
        );
    }
    let result = AuditResult {
        max_group_gap: max_group_gap(&groups),
        groups,
        audited_value,
        scores,
    };
    write_report(
        config.out.as_ref().expect("validated"),
        "audit",
        config,
        result,
    )
}

pub fn sensitivity(config: &SensitivityConfig) -> anyhow::Result<()> {
    let metric = config.metric.kind()?;
    let test = load(config.test.as_ref().expect("validated"), &config.columns)?;
    let seeds = config.seed_list();
    let report: SensitivityReport = match config.mode {
        Mode::Test => {
            let model = model_for(&config.model, &config.train, &config.columns, &config.fit)?;
            test_time_sensitivity(&model, &test, &config.fractions, &seeds, &metric)?
        }
        Mode::Train => {
            let train_set = load(config.train.as_ref().expect("validated"), &config.columns)?;
            train_time_sensitivity(
                &train_set,
                &test,
                &config.fractions,
                &seeds,
                &metric,
                &config.fit.train_config()?,
            )?
        }
    };
    let invalid = report.cells.iter().filter(|c| !c.is_valid()).count();
    if invalid > 0 {
        log::warn!("{invalid} sweep cells could not be computed");
    }
    for row in &report.summary {
        println!(
            "fraction {:.2} group {}: mean change {:+.2}% (sd {:.2}, {} seeds)",
            row.fraction, row.group, row.mean_percent_change, row.std_percent_change, row.seeds
        );
    }
    let csv_path = config.csv_out.as_ref().expect("validated");
    std::fs::write(csv_path, report.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    write_report(
        config.out.as_ref().expect("validated"),
        "sensitivity",
        config,
        report,
    )
}

#[derive(Serialize)]
struct RankResult {
    flips: FlipRecord,
    ranking: RankingResult,
}

pub fn rank(config: &RankCommandConfig) -> anyhow::Result<()> {
    let metric = config.metric.kind()?;
    let method = config.method()?;
    let clean = load(config.train.as_ref().expect("validated"), &config.columns)?;
    let audit_set = load(config.audit.as_ref().expect("validated"), &config.columns)?;
    let (noisy, flips) = flip_labels(
        &clean,
        config.flip_fraction,
        config.flip_seed,
        FlipScope::All,
    )?;
    let fit = config.fit.train_config()?;
    let model = train(&noisy, &fit)?;
    let ctx = build_context(&model, &noisy)?;
    let rank_config = RankConfig {
        train: fit,
        cv_seed: config.cv_seed,
    };
    let mut ranking = rank_training_points(
        method,
        &model,
        &ctx,
        &noisy,
        &audit_set,
        &metric,
        &rank_config,
    )?;
    if let Some(&k) = config.k.iter().find(|&&k| k > noisy.len()) {
        return Err(config_error(format!(
            "k = {k} exceeds the {} training points",
            noisy.len()
        )));
    }
    ranking.evaluate(&flips, &config.k)?;
    for (k, p) in &ranking.precision_at_k {
        println!(
            "{method}: precision@{k} = {p:.3} ({} flipped of {})",
            flips.flipped_indices.len(),
            noisy.len()
        );
    }
    write_report(
        config.out.as_ref().expect("validated"),
        "rank",
        config,
        RankResult { flips, ranking },
    )
}

#[derive(Serialize)]
struct RelabelResult {
    flips: FlipRecord,
    outcome: RelabelOutcome,
}

pub fn relabel(config: &RelabelCommandConfig) -> anyhow::Result<()> {
    let metric = config.metric.kind()?;
    let clean = load(config.train.as_ref().expect("validated"), &config.columns)?;
    let audit_set = load(config.audit.as_ref().expect("validated"), &config.columns)?;
    let (noisy, flips) = flip_labels(
        &clean,
        config.flip_fraction,
        config.flip_seed,
        FlipScope::All,
    )?;
    let fit = config.fit.train_config()?;
    let model = train(&noisy, &fit)?;
    let relabel_config = RelabelConfig {
        train: fit,
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        full_retrain: config.full_retrain,
        pool: config.pool,
    };
    let outcome = relabel_and_finetune(
        &model,
        &noisy,
        &audit_set,
        &metric,
        config.top_fraction,
        &relabel_config,
    )?;
    println!(
        "relabeled {} of {} positive candidates; {} {:.6} -> {:.6}",
        outcome.relabeled.len(),
        outcome.positive_candidates,
        metric.metric,
        outcome.audited_before,
        outcome.audited_after
    );
    write_report(
        config.out.as_ref().expect("validated"),
        "relabel",
        config,
        RelabelResult { flips, outcome },
    )
}

#[derive(Serialize)]
struct OracleResult {
    n_train: usize,
    n_audit: usize,
    spearman_loss: f64,
    spearman_disparity: f64,
    flip_sign_agreement: f64,
    flip_points_counted: usize,
    passed: bool,
}

pub fn oracle_check(config: &OracleCheckConfig) -> anyhow::Result<()> {
    let metric = config.metric.kind()?;
    let train_set = make_synthetic_group_task(
        config.n,
        config.dim,
        config.epsilon,
        config.separation,
        config.seed,
    )
    .map_err(|e| config_error(e.to_string()))?;
    // same seed, so the same class direction; a larger held-out draw
    let audit_set = make_synthetic_group_task(
        2 * config.n,
        config.dim,
        config.epsilon,
        config.separation,
        config.seed,
    )?;
    let z_t = audit_set
        .samples()
        .get(config.test_index)
        .ok_or_else(|| config_error(format!("--test-index {} out of range", config.test_index)))?
        .clone();
    let fit = influence_audit::TrainConfig::with_ridge(config.ridge);
    let model = train(&train_set, &fit)?;
    let ctx = build_context(&model, &train_set)?;
    let oracle = RetrainOracle::new(&train_set, fit)?;
    let n = train_set.len() as f64;

    let loss_delta = oracle.all_leave_one_out(|p| influence_audit::model::sample_loss(p, &z_t))?;
    let loss_pred = train_set
        .samples()
        .iter()
        .map(|z| influence_up_loss(&ctx, &model, z, &z_t).map(|v| -v / n))
        .collect::<Result<Vec<_>, _>>()?;
    let disp_delta = oracle.all_leave_one_out(|p| metric.value(p, &audit_set))?;
    let disp_pred = train_set
        .samples()
        .iter()
        .map(|z| influence_up_disparity(&ctx, &model, z, &audit_set, &metric).map(|v| -v / n))
        .collect::<Result<Vec<_>, _>>()?;
    let flip_delta = oracle.all_label_flips(|p| metric.value(p, &audit_set))?;
    let adjoint = Adjoint::for_disparity(&ctx, &model, &audit_set, &metric)?;
    let (mut agree, mut counted) = (0usize, 0usize);
    for (z, delta) in train_set.samples().iter().zip(&flip_delta) {
        if delta.abs() > ORACLE_NOISE {
            counted += 1;
            if (adjoint.canonical(&model, z)? > 0.0) == (*delta < 0.0) {
                agree += 1;
            }
        }
    }

    let spearman_loss = spearman(&loss_pred, &loss_delta);
    let spearman_disparity = spearman(&disp_pred, &disp_delta);
    let flip_sign_agreement = if counted == 0 {
        1.0
    } else {
        agree as f64 / counted as f64
    };
    let passed = spearman_disparity >= config.min_spearman;
    println!("spearman(influence_up_loss, leave-one-out) = {spearman_loss:.4}");
    println!("spearman(influence_up_disparity, leave-one-out) = {spearman_disparity:.4}");
    println!(
        "label-flip sign agreement = {:.1}% ({agree}/{counted})",
        100.0 * flip_sign_agreement
    );
    let result = OracleResult {
        n_train: train_set.len(),
        n_audit: audit_set.len(),
        spearman_loss,
        spearman_disparity,
        flip_sign_agreement,
        flip_points_counted: counted,
        passed,
    };
    if let Some(out) = &config.out {
        write_report(out, "oracle-check", config, result)?;
    }
    if !passed {
        return Err(breach_error(format!(
            "disparity rank correlation {spearman_disparity:.4} below {}",
            config.min_spearman
        )));
    }
    Ok(())
}

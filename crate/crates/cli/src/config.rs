//! Effective per-command configuration: defaults, then the JSON file, then flags.

use std::path::{Path, PathBuf};

use influence_audit::{
    default_grid, CsvSchema, Metric, MetricKind, RankMethod, RelabelPool, TrainConfig,
    DEFAULT_PRECISION_K, DEFAULT_TOP_FRACTION,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{
    AuditArgs, ColumnArgs, FitArgs, GenerateArgs, MetricArgs, OracleCheckArgs, RankArgs,
    RelabelArgs, SensitivityArgs, TrainArgs,
};
use crate::errors::config_error;

macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = v; } )*
    };
}

macro_rules! overlay_opt {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = Some(v); } )*
    };
}

/// Reads a command config from JSON. A report file is accepted too, in which
/// case its embedded `config` is used.
pub fn load_file<T: DeserializeOwned>(
    path: Option<&Path>,
    command: &str,
) -> anyhow::Result<Option<T>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| config_error(format!("config {}: {e}", path.display())))?;
    if let Some(embedded) = value.get("config").cloned() {
        match value.get("command").and_then(|c| c.as_str()) {
            Some(c) if c != command => {
                return Err(config_error(format!(
                    "{} is a `{c}` report, not `{command}`",
                    path.display()
                )))
            }
            _ => value = embedded,
        }
    }
    serde_json::from_value(value)
        .map(Some)
        .map_err(|e| config_error(format!("config {}: {e}", path.display())))
}

fn require(path: &Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    path.clone()
        .ok_or_else(|| config_error(format!("missing required --{flag}")))
}

fn check_outputs(inputs: &[&Option<PathBuf>], outputs: &[&Option<PathBuf>]) -> anyhow::Result<()> {
    for out in outputs.iter().filter_map(|o| o.as_ref()) {
        if inputs.iter().filter_map(|i| i.as_ref()).any(|i| i == out) {
            return Err(config_error(format!(
                "output {} would overwrite an input",
                out.display()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Columns {
    pub label: String,
    pub group: String,
    pub features: Vec<String>,
}

impl Default for Columns {
    fn default() -> Self {
        let schema = CsvSchema::default();
        Self {
            label: schema.label,
            group: schema.group,
            features: schema.features,
        }
    }
}

impl Columns {
    fn apply(&mut self, args: &ColumnArgs) {
        if let Some(v) = &args.label_column {
            self.label = v.clone();
        }
        if let Some(v) = &args.group_column {
            self.group = v.clone();
        }
        if let Some(v) = &args.feature_columns {
            self.features = v.clone();
        }
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            features: self.features.clone(),
            label: self.label.clone(),
            group: self.group.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fit {
    pub ridge: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for Fit {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            ridge: t.ridge,
            tolerance: t.tolerance,
            max_iterations: t.max_iterations,
        }
    }
}

impl Fit {
    fn apply(&mut self, args: &FitArgs) {
        overlay!(self, args; ridge, tolerance, max_iterations);
    }

    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let cfg = TrainConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ridge: self.ridge,
        };
        cfg.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSpec {
    pub name: String,
    pub bins: usize,
    pub group: Option<usize>,
}

impl MetricSpec {
    fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            bins: influence_audit::metrics::DEFAULT_ECE_BINS,
            group: None,
        }
    }

    fn apply(&mut self, args: &MetricArgs) {
        if let Some(v) = &args.metric {
            self.name = v.clone();
        }
        if let Some(v) = args.bins {
            self.bins = v;
        }
        if let Some(v) = args.group {
            self.group = Some(v);
        }
    }

    pub fn kind(&self) -> anyhow::Result<MetricKind> {
        let metric = match self
            .name
            .parse::<Metric>()
            .map_err(|e| config_error(e.to_string()))?
        {
            Metric::Ece { .. } => Metric::Ece { bins: self.bins },
            m => m,
        };
        let kind = MetricKind {
            metric,
            group_filter: self.group,
        };
        kind.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(kind)
    }
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self::named("ece")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub separation: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            dim: 8,
            epsilon: 0.15,
            separation: 2.0,
            seed: 0,
            out_dir: None,
        }
    }
}

impl GenerateConfig {
    pub fn resolve(file: Option<Self>, args: &GenerateArgs) -> anyhow::Result<(Self, PathBuf)> {
        let mut cfg = file.unwrap_or_default();
        overlay!(cfg, args; n, dim, epsilon, separation, seed);
        overlay_opt!(cfg, args; out_dir);
        let out_dir = require(&cfg.out_dir, "out-dir")?;
        if !(0.0..=0.5).contains(&cfg.epsilon) {
            return Err(config_error(format!(
                "--epsilon must lie in [0, 0.5], got {}",
                cfg.epsilon
            )));
        }
        if cfg.n < 10 || !cfg.n.is_multiple_of(2) {
            return Err(config_error(format!(
                "--n must be even and at least 10, got {}",
                cfg.n
            )));
        }
        if cfg.dim == 0 {
            return Err(config_error("--dim must be at least 1"));
        }
        Ok((cfg, out_dir))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub train: Option<PathBuf>,
    pub columns: Columns,
    pub fit: Fit,
    pub out: Option<PathBuf>,
}

impl TrainCommandConfig {
    pub fn resolve(file: Option<Self>, args: &TrainArgs) -> anyhow::Result<Self> {
        let mut cfg = file.unwrap_or_default();
        overlay_opt!(cfg, args; train, out);
        cfg.columns.apply(&args.columns);
        cfg.fit.apply(&args.fit);
        require(&cfg.train, "train")?;
        require(&cfg.out, "out")?;
        cfg.fit.train_config()?;
        check_outputs(&[&cfg.train], &[&cfg.out])?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub data: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub columns: Columns,
    pub fit: Fit,
    pub metric: MetricSpec,
    pub estimator: String,
    pub scores_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            data: None,
            train: None,
            model: None,
            columns: Columns::default(),
            fit: Fit::default(),
            metric: MetricSpec::default(),
            estimator: "pert_label_disparity".into(),
            scores_out: None,
            out: None,
        }
    }
}

impl AuditConfig {
    pub fn resolve(file: Option<Self>, args: &AuditArgs) -> anyhow::Result<Self> {
        let mut cfg = file.unwrap_or_default();
        overlay_opt!(cfg, args; data, train, model, scores_out, out);
        overlay!(cfg, args; estimator);
        cfg.columns.apply(&args.columns);
        cfg.fit.apply(&args.fit);
        cfg.metric.apply(&args.metric);
        require(&cfg.data, "data")?;
        require(&cfg.out, "out")?;
        cfg.metric.kind()?;
        cfg.fit.train_config()?;
        let estimator = cfg.estimator()?;
        if matches!(
            estimator,
            influence_audit::Estimator::UpLoss | influence_audit::Estimator::PertLabelLoss
        ) {
            return Err(config_error(
                "audit scores support up_params, up_disparity and pert_label_disparity",
            ));
        }
        if cfg.model.is_none() && cfg.train.is_none() {
            return Err(config_error("audit needs --model or --train"));
        }
        if cfg.scores_out.is_some() && cfg.train.is_none() {
            return Err(config_error("--scores-out needs --train"));
        }
        check_outputs(
            &[&cfg.data, &cfg.train, &cfg.model],
            &[&cfg.out, &cfg.scores_out],
        )?;
        Ok(cfg)
    }

    pub fn estimator(&self) -> anyhow::Result<influence_audit::Estimator> {
        self.estimator
            .parse()
            .map_err(|e: influence_audit::AuditError| config_error(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Test,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub mode: Mode,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub columns: Columns,
    pub fit: Fit,
    pub metric: MetricSpec,
    pub fractions: Vec<f64>,
    pub seeds: usize,
    pub seed_offset: u64,
    pub out: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Test,
            train: None,
            test: None,
            model: None,
            columns: Columns::default(),
            fit: Fit::default(),
            metric: MetricSpec::default(),
            fractions: default_grid(),
            seeds: 10,
            seed_offset: 0,
            out: None,
            csv_out: None,
        }
    }
}

impl SensitivityConfig {
    pub fn resolve(file: Option<Self>, args: &SensitivityArgs) -> anyhow::Result<Self> {
        let mut cfg = file.unwrap_or_default();
        if let Some(mode) = &args.mode {
            cfg.mode = match mode.as_str() {
                "test" | "test-time" | "test_time" => Mode::Test,
                "train" | "train-time" | "train_time" => Mode::Train,
                other => {
                    return Err(config_error(format!(
                        "--mode must be test or train, got {other}"
                    )))
                }
            };
        }
        overlay_opt!(cfg, args; train, test, model, out, csv_out);
        overlay!(cfg, args; fractions, seeds, seed_offset);
        cfg.columns.apply(&args.columns);
        cfg.fit.apply(&args.fit);
        cfg.metric.apply(&args.metric);
        require(&cfg.test, "test")?;
        let out = require(&cfg.out, "out")?;
        if cfg.csv_out.is_none() {
            cfg.csv_out = Some(out.with_extension("csv"));
        }
        cfg.metric.kind()?;
        cfg.fit.train_config()?;
        match cfg.mode {
            Mode::Train if cfg.train.is_none() => {
                return Err(config_error("train-time mode needs --train"))
            }
            Mode::Train if cfg.model.is_some() => {
                return Err(config_error("train-time mode retrains; drop --model"))
            }
            Mode::Test if cfg.model.is_none() && cfg.train.is_none() => {
                return Err(config_error("test-time mode needs --model or --train"))
            }
            _ => {}
        }
        if cfg.seeds == 0 {
            return Err(config_error("--seeds must be at least 1"));
        }
        if cfg.fractions.is_empty() || cfg.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(config_error(
                "--fractions must be a non-empty list within [0, 1]",
            ));
        }
        check_outputs(
            &[&cfg.train, &cfg.test, &cfg.model],
            &[&cfg.out, &cfg.csv_out],
        )?;
        Ok(cfg)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64)
            .map(|s| self.seed_offset + s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankCommandConfig {
    pub train: Option<PathBuf>,
    pub audit: Option<PathBuf>,
    pub columns: Columns,
    pub fit: Fit,
    pub metric: MetricSpec,
    pub method: String,
    pub flip_fraction: f64,
    pub flip_seed: u64,
    pub k: Vec<usize>,
    pub cv_seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RankCommandConfig {
    fn default() -> Self {
        Self {
            train: None,
            audit: None,
            columns: Columns::default(),
            fit: Fit::default(),
            metric: MetricSpec::named("brier"),
            method: RankMethod::IfDisparityLabel.to_string(),
            flip_fraction: 0.0,
            flip_seed: 0,
            k: vec![DEFAULT_PRECISION_K],
            cv_seed: 0,
            out: None,
        }
    }
}

impl RankCommandConfig {
    pub fn resolve(file: Option<Self>, args: &RankArgs) -> anyhow::Result<Self> {
        let mut cfg = file.unwrap_or_default();
        overlay_opt!(cfg, args; train, audit, out);
        overlay!(cfg, args; method, flip_fraction, flip_seed, k, cv_seed);
        cfg.columns.apply(&args.columns);
        cfg.fit.apply(&args.fit);
        cfg.metric.apply(&args.metric);
        require(&cfg.train, "train")?;
        require(&cfg.audit, "audit")?;
        require(&cfg.out, "out")?;
        cfg.metric.kind()?;
        cfg.fit.train_config()?;
        cfg.method()?;
        check_fraction(cfg.flip_fraction, "--flip-fraction")?;
        if cfg.k.contains(&0) {
            return Err(config_error("--k values must be positive"));
        }
        check_outputs(&[&cfg.train, &cfg.audit], &[&cfg.out])?;
        Ok(cfg)
    }

    pub fn method(&self) -> anyhow::Result<RankMethod> {
        self.method
            .parse()
            .map_err(|e: influence_audit::AuditError| config_error(e.to_string()))
    }
}

fn check_fraction(f: f64, flag: &str) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(config_error(format!("{flag} must lie in [0, 1], got {f}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelabelCommandConfig {
    pub train: Option<PathBuf>,
    pub audit: Option<PathBuf>,
    pub columns: Columns,
    pub fit: Fit,
    pub metric: MetricSpec,
    pub top_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub full_retrain: bool,
    pub pool: RelabelPool,
    pub flip_fraction: f64,
    pub flip_seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RelabelCommandConfig {
    fn default() -> Self {
        let r = influence_audit::RelabelConfig::default();
        Self {
            train: None,
            audit: None,
            columns: Columns::default(),
            fit: Fit::default(),
            metric: MetricSpec::default(),
            top_fraction: DEFAULT_TOP_FRACTION,
            epochs: r.epochs,
            learning_rate: r.learning_rate,
            full_retrain: false,
            pool: RelabelPool::All,
            flip_fraction: 0.0,
            flip_seed: 0,
            out: None,
        }
    }
}

impl RelabelCommandConfig {
    pub fn resolve(file: Option<Self>, args: &RelabelArgs) -> anyhow::Result<Self> {
        let mut cfg = file.unwrap_or_default();
        overlay_opt!(cfg, args; train, audit, out);
        overlay!(cfg, args; top_fraction, epochs, learning_rate, flip_fraction, flip_seed);
        if args.full_retrain {
            cfg.full_retrain = true;
        }
        if let Some(pool) = &args.pool {
            cfg.pool = match pool.as_str() {
                "all" => RelabelPool::All,
                "audit-group" | "audit_group" => RelabelPool::AuditGroup,
                other => {
                    return Err(config_error(format!(
                        "--pool must be all or audit-group, got {other}"
                    )))
                }
            };
        }
        cfg.columns.apply(&args.columns);
        cfg.fit.apply(&args.fit);
        cfg.metric.apply(&args.metric);
        require(&cfg.train, "train")?;
        require(&cfg.audit, "audit")?;
        require(&cfg.out, "out")?;
        cfg.metric.kind()?;
        cfg.fit.train_config()?;
        check_fraction(cfg.flip_fraction, "--flip-fraction")?;
        if !(cfg.top_fraction > 0.0 && cfg.top_fraction <= 1.0) {
            return Err(config_error(format!(
                "--top-fraction must lie in (0, 1], got {}",
                cfg.top_fraction
            )));
        }
        if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
            return Err(config_error("--learning-rate must be finite and >= 0"));
        }
        if cfg.pool == RelabelPool::AuditGroup && cfg.metric.group.is_none() {
            return Err(config_error("--pool audit-group needs --group"));
        }
        check_outputs(&[&cfg.train, &cfg.audit], &[&cfg.out])?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheckConfig {
    pub n: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub separation: f64,
    pub ridge: f64,
    pub seed: u64,
    pub test_index: usize,
    pub metric: MetricSpec,
    pub min_spearman: f64,
    pub out: Option<PathBuf>,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            n: 60,
            dim: 4,
            epsilon: 0.15,
            separation: 2.0,
            ridge: 1e-2,
            seed: 0,
            test_index: 0,
            metric: MetricSpec {
                group: Some(1),
                ..MetricSpec::named("brier")
            },
            min_spearman: 0.95,
            out: None,
        }
    }
}

impl OracleCheckConfig {
    pub fn resolve(file: Option<Self>, args: &OracleCheckArgs) -> anyhow::Result<Self> {
        let mut cfg = file.unwrap_or_default();
        overlay!(cfg, args; n, dim, epsilon, separation, ridge, seed, test_index, min_spearman);
        overlay_opt!(cfg, args; out);
        cfg.metric.apply(&args.metric);
        cfg.metric.kind()?;
        TrainConfig::with_ridge(cfg.ridge)
            .validate()
            .map_err(|e| config_error(e.to_string()))?;
        if cfg.n < 4 || !cfg.n.is_multiple_of(2) {
            return Err(config_error(format!(
                "--n must be even and at least 4, got {}",
                cfg.n
            )));
        }
        if cfg.dim == 0 {
            return Err(config_error("--dim must be at least 1"));
        }
        if !(0.0..=0.5).contains(&cfg.epsilon) {
            return Err(config_error(format!(
                "--epsilon must lie in [0, 0.5], got {}",
                cfg.epsilon
            )));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    use crate::args::{Cli, Command};
    use crate::errors::ConfigError;

    fn rank_args(argv: &[&str]) -> RankArgs {
        let mut full = vec!["influence-audit", "rank"];
        full.extend_from_slice(argv);
        match Cli::parse_from(full).command {
            Command::Rank(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_file_values() {
        let file = RankCommandConfig {
            method: "loss".into(),
            flip_fraction: 0.1,
            ..RankCommandConfig::default()
        };
        let args = rank_args(&[
            "--train",
            "a.csv",
            "--audit",
            "b.csv",
            "--out",
            "r.json",
            "--flip-fraction",
            "0.2",
        ]);
        let cfg = RankCommandConfig::resolve(Some(file), &args).unwrap();
        assert_eq!(cfg.method, "loss");
        assert_eq!(cfg.flip_fraction, 0.2);
        assert_eq!(cfg.k, vec![50]);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let base = ["--train", "a.csv", "--audit", "b.csv", "--out", "r.json"];
        for extra in [
            &["--method", "oracle"][..],
            &["--flip-fraction", "1.5"],
            &["--metric", "auc"],
            &["--k", "0"],
        ] {
            let mut argv = base.to_vec();
            argv.extend_from_slice(extra);
            let err = RankCommandConfig::resolve(None, &rank_args(&argv)).unwrap_err();
            assert!(err.downcast_ref::<ConfigError>().is_some(), "{extra:?}");
        }
        let err = RankCommandConfig::resolve(
            None,
            &rank_args(&["--train", "a.csv", "--audit", "a.csv", "--out", "a.csv"]),
        );
        assert!(err.is_err());
    }

    #[test]
    fn report_files_replay_their_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerateConfig {
            n: 100,
            ..GenerateConfig::default()
        };
        let report = serde_json::json!({"schema_version": 1, "command": "generate", "config": cfg});
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, report.to_string()).unwrap();
        let loaded: GenerateConfig = load_file(Some(&path), "generate").unwrap().unwrap();
        assert_eq!(loaded, cfg);
        assert!(load_file::<TrainCommandConfig>(Some(&path), "train").is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 10, "nn": 3}"#).unwrap();
        assert!(load_file::<GenerateConfig>(Some(&path), "generate").is_err());
    }
}

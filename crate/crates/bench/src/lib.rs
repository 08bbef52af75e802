//! Shared fixtures for the criterion benchmarks.

use influence_audit::{
    build_context, flip_labels, make_synthetic_group_task, split, train, Dataset, FlipScope,
    Metric, MetricKind, ModelParams, SolveContext, TrainConfig,
};

/// A fitted model on a noisy synthetic training split, plus its clean audit split.
pub struct Fixture {
    pub train: Dataset,
    pub audit: Dataset,
    pub model: ModelParams,
    pub ctx: SolveContext,
    pub metric: MetricKind,
}

pub fn fixture(n: usize, dim: usize, seed: u64) -> Fixture {
    let data = make_synthetic_group_task(n, dim, 0.15, 2.0, seed).expect("valid task");
    let (clean, audit, _) = split(&data, seed).expect("large enough to split");
    let (train_set, _) = flip_labels(&clean, 0.2, seed, FlipScope::All).expect("valid fraction");
    let model = train(&train_set, &TrainConfig::default()).expect("converges");
    let ctx = build_context(&model, &train_set).expect("positive definite");
    Fixture {
        train: train_set,
        audit,
        model,
        ctx,
        metric: MetricKind::for_group(Metric::ece(), 1),
    }
}

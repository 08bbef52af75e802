//! L2-regularized logistic regression.
//!
//! Parameters are `[w_1, ..., w_d, b]`; features are augmented with a trailing
//! constant 1 so the bias is the last coordinate. The empirical risk is
//!
//! ```text
//! R(θ) = (1/n) Σ ℓ(z_i, θ) + (λ/2) ||w||²      (bias not penalized)
//! ℓ(z, θ) = -y ln p - (1-y) ln(1-p),  p = σ(θ·x̃)
//! ```
//!
//! All reductions run sequentially in sample order, so results are
//! bit-stable for identical inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{AuditError, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Default ridge strength.
pub const DEFAULT_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Length `d + 1`; the last entry is the bias.
    pub weights: Vec<f64>,
    pub ridge: f64,
}

impl ModelParams {
    pub fn new(weights: Vec<f64>, ridge: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(AuditError::Domain(
                "weights must include at least the bias".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(AuditError::Domain("weights must be finite".into()));
        }
        if !ridge.is_finite() || ridge < 0.0 {
            return Err(AuditError::Domain(format!(
                "ridge must be finite and >= 0, got {ridge}"
            )));
        }
        Ok(Self { weights, ridge })
    }

    pub fn zeros(feature_dim: usize, ridge: f64) -> Self {
        Self {
            weights: vec![0.0; feature_dim + 1],
            ridge,
        }
    }

    /// Number of input features `d` (excluding the bias).
    pub fn feature_dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn param_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    fn with_vector(&self, v: &DVector<f64>) -> Self {
        Self {
            weights: v.as_slice().to_vec(),
            ridge: self.ridge,
        }
    }

    /// Raw logit `θ·x̃`.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.logit_unchecked(x))
    }

    fn logit_unchecked(&self, x: &[f64]) -> f64 {
        let d = x.len();
        x.iter()
            .zip(&self.weights[..d])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.weights[d]
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d + 1 != self.weights.len() {
            return Err(AuditError::DimensionMismatch {
                expected: self.weights.len() - 1,
                actual: d,
            });
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        self.check_dim(data.feature_dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Stop once the gradient norm falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub ridge: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl TrainConfig {
    pub fn with_ridge(ridge: f64) -> Self {
        Self {
            ridge,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(AuditError::Domain(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations < 1 {
            return Err(AuditError::Domain("max_iterations must be >= 1".into()));
        }
        if !(self.ridge > 0.0) || !self.ridge.is_finite() {
            return Err(AuditError::Domain(format!(
                "ridge must be > 0, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `x̃ = [x, 1]`.
pub fn augmented(x: &[f64]) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + 1);
    v.as_mut_slice()[..x.len()].copy_from_slice(x);
    v[x.len()] = 1.0;
    v
}

/// Positive-class probability `σ(θ·x̃)`, clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_proba(params: &ModelParams, x: &[f64]) -> Result<f64> {
    Ok(clamp_prob(sigmoid(params.logit(x)?)))
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub(crate) fn proba_unchecked(params: &ModelParams, x: &[f64]) -> f64 {
    clamp_prob(sigmoid(params.logit_unchecked(x)))
}

/// Probabilities for every sample of `data`, in order.
pub fn predict_all(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    params.check_data(data)?;
    Ok(data
        .samples()
        .iter()
        .map(|s| proba_unchecked(params, &s.features))
        .collect())
}

/// Cross-entropy of one sample.
pub fn sample_loss(params: &ModelParams, sample: &Sample) -> Result<f64> {
    let p = predict_proba(params, &sample.features)?;
    Ok(cross_entropy(p, sample.y()))
}

#[inline]
fn cross_entropy(p: f64, y: f64) -> f64 {
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Per-sample gradient `(p - y) x̃` (no ridge term).
pub fn sample_grad(params: &ModelParams, sample: &Sample) -> Result<DVector<f64>> {
    let p = predict_proba(params, &sample.features)?;
    Ok(augmented(&sample.features) * (p - sample.y()))
}

fn ridge_penalty(params: &ModelParams) -> f64 {
    let d = params.feature_dim();
    0.5 * params.ridge * params.weights[..d].iter().map(|w| w * w).sum::<f64>()
}

/// Mean cross-entropy plus `(λ/2)||w||²`.
pub fn risk(params: &ModelParams, data: &Dataset) -> Result<f64> {
    params.check_data(data)?;
    if data.is_empty() {
        return Ok(ridge_penalty(params));
    }
    let total: f64 = data
        .samples()
        .iter()
        .map(|s| cross_entropy(proba_unchecked(params, &s.features), s.y()))
        .sum();
    Ok(total / data.len() as f64 + ridge_penalty(params))
}

/// Analytic gradient of [`risk`].
pub fn grad_risk(params: &ModelParams, data: &Dataset) -> Result<DVector<f64>> {
    params.check_data(data)?;
    let k = params.param_dim();
    let d = params.feature_dim();
    let mut g = DVector::zeros(k);
    for s in data.samples() {
        let r = proba_unchecked(params, &s.features) - s.y();
        for (gj, xj) in g.iter_mut().zip(&s.features) {
            *gj += r * xj;
        }
        g[d] += r;
    }
    if !data.is_empty() {
        g /= data.len() as f64;
    }
    for j in 0..d {
        g[j] += params.ridge * params.weights[j];
    }
    Ok(g)
}

/// Closed-form Hessian `(1/n) Σ p(1-p) x̃ x̃ᵀ + λ diag(1, …, 1, 0)`.
pub fn hessian_risk(params: &ModelParams, data: &Dataset) -> Result<DMatrix<f64>> {
    params.check_data(data)?;
    let k = params.param_dim();
    let mut h = DMatrix::zeros(k, k);
    for s in data.samples() {
        let p = proba_unchecked(params, &s.features);
        let x = augmented(&s.features);
        h.ger(p * (1.0 - p), &x, &x, 1.0);
    }
    if !data.is_empty() {
        h /= data.len() as f64;
    }
    for j in 0..params.feature_dim() {
        h[(j, j)] += params.ridge;
    }
    // rank-one updates round differently above and below the diagonal
    Ok((&h + h.transpose()) * 0.5)
}

/// Mixed derivative `∂/∂y ∇_θ ℓ(z, θ) = -x̃` of the cross-entropy loss.
pub fn grad_label_grad_theta(params: &ModelParams, sample: &Sample) -> Result<DVector<f64>> {
    params.check_dim(sample.features.len())?;
    Ok(-augmented(&sample.features))
}

/// Outcome diagnostics of a Newton run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub grad_norm: f64,
    pub risk: f64,
}

/// Damped Newton minimization of [`risk`] from the zero vector.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<ModelParams> {
    train_with_summary(data, config).map(|(p, _)| p)
}

pub fn train_with_summary(
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainSummary)> {
    config.validate()?;
    if data.is_empty() {
        return Err(AuditError::Size("cannot train on an empty dataset".into()));
    }
    let mut params = ModelParams::zeros(data.feature_dim(), config.ridge);
    let mut current = risk(&params, data)?;
    let mut grad = grad_risk(&params, data)?;
    let mut iterations = 0;
    while grad.norm() > config.tolerance {
        if iterations == config.max_iterations {
            return Err(AuditError::Convergence {
                iterations,
                grad_norm: grad.norm(),
            });
        }
        iterations += 1;
        let hess = hessian_risk(&params, data)?;
        let direction = match hess.cholesky() {
            Some(chol) => -chol.solve(&grad),
            None => -grad.clone(),
        };
        let slope = grad.dot(&direction);
        let theta = params.as_vector();
        let mut step = 1.0;
        let mut accepted = None;
        // Armijo backtracking, with slack for round-off once the decrease is below resolution.
        let slack = 16.0 * f64::EPSILON * current.abs();
        for _ in 0..60 {
            let candidate = params.with_vector(&(&theta + &direction * step));
            let value = risk(&candidate, data)?;
            if value <= current + 1e-4 * step * slope + slack {
                accepted = Some((candidate, value));
                break;
            }
            step *= 0.5;
        }
        let Some((next, value)) = accepted else {
            // No decrease is representable any more; report where we stand.
            return Err(AuditError::Convergence {
                iterations,
                grad_norm: grad.norm(),
            });
        };
        params = next;
        current = value;
        grad = grad_risk(&params, data)?;
    }
    let summary = TrainSummary {
        iterations,
        grad_norm: grad.norm(),
        risk: current,
    };
    Ok((params, summary))
}

pub const DEFAULT_FINETUNE_EPOCHS: usize = 1;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Full-batch gradient descent: one step of size `learning_rate` per epoch.
pub fn finetune(
    params: &ModelParams,
    data: &Dataset,
    epochs: usize,
    learning_rate: f64,
) -> Result<ModelParams> {
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(AuditError::Domain(format!(
            "learning rate must be >= 0, got {learning_rate}"
        )));
    }
    let mut theta = params.as_vector();
    let mut current = params.clone();
    for _ in 0..epochs {
        let g = grad_risk(&current, data)?;
        theta -= g * learning_rate;
        current = current.with_vector(&theta);
    }
    Ok(current)
}

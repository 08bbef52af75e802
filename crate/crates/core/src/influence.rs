//! Influence estimates of training points on parameters, test loss and group
//! disparity metrics, plus retraining oracles that measure the same
//! quantities by brute force.
//!
//! Every estimator is a bilinear form `aᵀ H⁻¹ b` around the ERM solution θ̂
//! with `H` the Hessian of the training risk. Scoring a whole training set
//! against one target (a test point or an audit set) needs only one linear
//! solve: the adjoint `s = H⁻¹ ∇(target)` is computed once and each training
//! point then costs a dot product.
//!
//! Sign conventions: upweighting estimators follow `dθ̂/dε`, so removing a
//! point corresponds to `ε = -1/n` and the leave-one-out change is
//! approximately `-(1/n)` times the score. For label perturbation the
//! *canonical* score is `-(1 - 2y) · I_pert`: a positive value predicts that
//! flipping the label lowers the target, and the retrained change after the
//! flip is approximately `-(1/n)` times the canonical score.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{AuditError, Result};
use crate::metrics::{grad_disparity, MetricKind};
use crate::model::{
    augmented, grad_label_grad_theta, hessian_risk, sample_grad, train, ModelParams, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Parameter dimensions above this use conjugate gradient instead of Cholesky.
    pub cg_cutoff: usize,
    /// Relative residual tolerance for conjugate gradient.
    pub cg_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            cg_cutoff: 500,
            cg_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
enum Solver {
    Cholesky(Cholesky<f64, Dyn>),
    ConjugateGradient { tolerance: f64 },
}

/// Factorized training Hessian at θ̂, reusable across any number of solves.
#[derive(Debug, Clone)]
pub struct SolveContext {
    hessian: DMatrix<f64>,
    solver: Solver,
}

/// Builds the solve context with default [`SolverOptions`].
pub fn build_context(model: &ModelParams, train: &Dataset) -> Result<SolveContext> {
    SolveContext::new(model, train, SolverOptions::default())
}

impl SolveContext {
    pub fn new(model: &ModelParams, train: &Dataset, options: SolverOptions) -> Result<Self> {
        Self::from_hessian(hessian_risk(model, train)?, options)
    }

    pub fn from_hessian(hessian: DMatrix<f64>, options: SolverOptions) -> Result<Self> {
        if !hessian.is_square() {
            return Err(AuditError::Domain("Hessian must be square".into()));
        }
        let solver = if hessian.nrows() > options.cg_cutoff {
            // a cheap diagonal screen; CG itself detects indefiniteness
            if hessian.diagonal().iter().any(|&d| !(d > 0.0)) {
                return Err(AuditError::NotPositiveDefinite(
                    "non-positive Hessian diagonal".into(),
                ));
            }
            Solver::ConjugateGradient {
                tolerance: options.cg_tolerance,
            }
        } else {
            let chol = Cholesky::new(hessian.clone()).ok_or_else(|| {
                AuditError::NotPositiveDefinite(
                    "Cholesky factorization of the Hessian failed".into(),
                )
            })?;
            Solver::Cholesky(chol)
        };
        Ok(Self { hessian, solver })
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn uses_conjugate_gradient(&self) -> bool {
        matches!(self.solver, Solver::ConjugateGradient { .. })
    }

    /// `H⁻¹ rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dim() {
            return Err(AuditError::DimensionMismatch {
                expected: self.dim(),
                actual: rhs.len(),
            });
        }
        match &self.solver {
            Solver::Cholesky(chol) => Ok(chol.solve(rhs)),
            Solver::ConjugateGradient { tolerance } => {
                conjugate_gradient(&self.hessian, rhs, *tolerance)
            }
        }
    }
}

fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>, tolerance: f64) -> Result<DVector<f64>> {
    let n = b.len();
    let mut x = DVector::zeros(n);
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..(10 * n).max(100) {
        let ap = a * &p;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(AuditError::NotPositiveDefinite(
                "conjugate gradient met a non-positive curvature".into(),
            ));
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_next = r.dot(&r);
        if rr_next.sqrt() <= tolerance * b_norm {
            return Ok(x);
        }
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    Err(AuditError::Domain(
        "conjugate gradient did not reach its tolerance".into(),
    ))
}

/// `I_up,params(z) = -H⁻¹ ∇θ ℓ(z, θ̂)`.
pub fn influence_up_params(
    ctx: &SolveContext,
    model: &ModelParams,
    z: &Sample,
) -> Result<DVector<f64>> {
    Ok(-ctx.solve(&sample_grad(model, z)?)?)
}

/// `I_up,loss(z_i, z_t) = -∇θ ℓ(z_t)ᵀ H⁻¹ ∇θ ℓ(z_i)`.
pub fn influence_up_loss(
    ctx: &SolveContext,
    model: &ModelParams,
    z_i: &Sample,
    z_t: &Sample,
) -> Result<f64> {
    Adjoint::for_test_loss(ctx, model, z_t)?.up(model, z_i)
}

/// `I_pert,loss,y(z_j, z_t) = -∇θ ℓ(z_t)ᵀ H⁻¹ ∇y∇θ ℓ(z_j)`; raw (not canonical) value.
pub fn influence_pert_label_loss(
    ctx: &SolveContext,
    model: &ModelParams,
    z_j: &Sample,
    z_t: &Sample,
) -> Result<f64> {
    Adjoint::for_test_loss(ctx, model, z_t)?.pert_label(model, z_j)
}

/// `I_up,disparity(z_i, S) = -∇θ GD(S)ᵀ H⁻¹ ∇θ ℓ(z_i)`.
///
/// Builds the adjoint on every call; use [`Adjoint::for_disparity`] to score many points.
pub fn influence_up_disparity(
    ctx: &SolveContext,
    model: &ModelParams,
    z_i: &Sample,
    audit_set: &Dataset,
    metric: &MetricKind,
) -> Result<f64> {
    Adjoint::for_disparity(ctx, model, audit_set, metric)?.up(model, z_i)
}

/// `I_pert,disparity,y(z_j, S) = -∇θ GD(S)ᵀ H⁻¹ ∇y∇θ ℓ(z_j)`; raw (not canonical) value.
pub fn influence_pert_label_disparity(
    ctx: &SolveContext,
    model: &ModelParams,
    z_j: &Sample,
    audit_set: &Dataset,
    metric: &MetricKind,
) -> Result<f64> {
    Adjoint::for_disparity(ctx, model, audit_set, metric)?.pert_label(model, z_j)
}

/// Ranking score for a label perturbation: positive means flipping the
/// current label is predicted to decrease the target.
#[inline]
pub fn canonical_label_score(raw: f64, label: u8) -> f64 {
    let direction = 1.0 - 2.0 * f64::from(label);
    -direction * raw
}

/// `s = H⁻¹ ∇θ (target)` for a fixed target, shared across training points.
#[derive(Debug, Clone)]
pub struct Adjoint {
    vector: DVector<f64>,
}

impl Adjoint {
    pub fn for_disparity(
        ctx: &SolveContext,
        model: &ModelParams,
        audit_set: &Dataset,
        metric: &MetricKind,
    ) -> Result<Self> {
        let g = grad_disparity(model, audit_set, metric)?;
        Ok(Self {
            vector: ctx.solve(&g)?,
        })
    }

    pub fn for_test_loss(ctx: &SolveContext, model: &ModelParams, z_t: &Sample) -> Result<Self> {
        Ok(Self {
            vector: ctx.solve(&sample_grad(model, z_t)?)?,
        })
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.vector
    }

    /// Upweighting influence `-sᵀ ∇θ ℓ(z)`.
    pub fn up(&self, model: &ModelParams, z: &Sample) -> Result<f64> {
        Ok(-self.vector.dot(&sample_grad(model, z)?))
    }

    /// Raw label-perturbation influence `-sᵀ ∇y∇θ ℓ(z) = sᵀ x̃`.
    pub fn pert_label(&self, model: &ModelParams, z: &Sample) -> Result<f64> {
        Ok(-self.vector.dot(&grad_label_grad_theta(model, z)?))
    }

    /// [`canonical_label_score`] of [`Adjoint::pert_label`].
    pub fn canonical(&self, model: &ModelParams, z: &Sample) -> Result<f64> {
        Ok(canonical_label_score(self.pert_label(model, z)?, z.label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Euclidean norm of `I_up,params`.
    UpParams,
    UpLoss,
    PertLabelLoss,
    UpDisparity,
    PertLabelDisparity,
}

impl Estimator {
    pub fn is_label_perturbation(self) -> bool {
        matches!(
            self,
            Estimator::PertLabelLoss | Estimator::PertLabelDisparity
        )
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::UpParams => "up_params",
            Estimator::UpLoss => "up_loss",
            Estimator::PertLabelLoss => "pert_label_loss",
            Estimator::UpDisparity => "up_disparity",
            Estimator::PertLabelDisparity => "pert_label_disparity",
        })
    }
}

impl FromStr for Estimator {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "up_params" => Ok(Estimator::UpParams),
            "up_loss" => Ok(Estimator::UpLoss),
            "pert_label_loss" => Ok(Estimator::PertLabelLoss),
            "up_disparity" => Ok(Estimator::UpDisparity),
            "pert_label_disparity" => Ok(Estimator::PertLabelDisparity),
            _ => Err(AuditError::UnknownMethod(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScore {
    pub train_index: usize,
    pub estimator: Estimator,
    /// Raw estimator value (the norm for `UpParams`).
    pub value: f64,
    /// Canonical label score for perturbation estimators, otherwise `value`.
    pub canonical: f64,
    pub group: usize,
    pub label: u8,
}

/// What the scores are measured against.
#[derive(Debug, Clone, Copy)]
pub enum ScoreTarget<'a> {
    /// Only valid for [`Estimator::UpParams`].
    Parameters,
    TestLoss(&'a Sample),
    Disparity {
        audit_set: &'a Dataset,
        metric: &'a MetricKind,
    },
}

/// Scores every training point with one estimator, ordered by train index.
pub fn score_training_set(
    estimator: Estimator,
    ctx: &SolveContext,
    model: &ModelParams,
    train: &Dataset,
    target: ScoreTarget<'_>,
) -> Result<Vec<InfluenceScore>> {
    let adjoint = match (estimator, target) {
        (Estimator::UpParams, _) => None,
        (Estimator::UpLoss | Estimator::PertLabelLoss, ScoreTarget::TestLoss(z_t)) => {
            Some(Adjoint::for_test_loss(ctx, model, z_t)?)
        }
        (
            Estimator::UpDisparity | Estimator::PertLabelDisparity,
            ScoreTarget::Disparity { audit_set, metric },
        ) => Some(Adjoint::for_disparity(ctx, model, audit_set, metric)?),
        (e, _) => {
            return Err(AuditError::Domain(format!(
                "estimator {e} does not match the score target"
            )))
        }
    };
    train
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let value = match (&adjoint, estimator) {
                (None, _) => influence_up_params(ctx, model, z)?.norm(),
                (Some(a), e) if e.is_label_perturbation() => a.pert_label(model, z)?,
                (Some(a), _) => a.up(model, z)?,
            };
            let canonical = if estimator.is_label_perturbation() {
                canonical_label_score(value, z.label)
            } else {
                value
            };
            Ok(InfluenceScore {
                train_index: i,
                estimator,
                value,
                canonical,
                group: z.group,
                label: z.label,
            })
        })
        .collect()
}

/// Writes scores as CSV: `train_index,estimator,raw_value,canonical_score,group,label`.
pub fn write_scores_csv<P: AsRef<Path>>(path: P, scores: &[InfluenceScore]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "train_index,estimator,raw_value,canonical_score,group,label"
    )?;
    for s in scores {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.train_index, s.estimator, s.value, s.canonical, s.group, s.label
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Brute-force retraining around a fixed baseline fit.
#[derive(Debug, Clone)]
pub struct RetrainOracle<'a> {
    train: &'a Dataset,
    config: TrainConfig,
    baseline: ModelParams,
}

impl<'a> RetrainOracle<'a> {
    pub fn new(train: &'a Dataset, config: TrainConfig) -> Result<Self> {
        let baseline = crate::model::train(train, &config)?;
        Ok(Self {
            train,
            config,
            baseline,
        })
    }

    pub fn baseline(&self) -> &ModelParams {
        &self.baseline
    }

    /// θ̂ retrained from scratch without index `i`.
    pub fn loo_params(&self, i: usize) -> Result<ModelParams> {
        self.check_index(i)?;
        train(&self.train.without(i), &self.config)
    }

    /// θ̂ retrained from scratch with the label of `j` flipped.
    pub fn flip_params(&self, j: usize) -> Result<ModelParams> {
        self.check_index(j)?;
        train(&self.train.with_flipped(&[j]), &self.config)
    }

    /// `evaluator(θ̂_{-i}) - evaluator(θ̂)`.
    pub fn leave_one_out<F>(&self, i: usize, evaluator: F) -> Result<f64>
    where
        F: Fn(&ModelParams) -> Result<f64>,
    {
        Ok(evaluator(&self.loo_params(i)?)? - evaluator(&self.baseline)?)
    }

    /// `evaluator(θ̂_{flip j}) - evaluator(θ̂)`.
    pub fn flip_label<F>(&self, j: usize, evaluator: F) -> Result<f64>
    where
        F: Fn(&ModelParams) -> Result<f64>,
    {
        Ok(evaluator(&self.flip_params(j)?)? - evaluator(&self.baseline)?)
    }

    /// Leave-one-out deltas for every index, computed in parallel, in index order.
    pub fn all_leave_one_out<F>(&self, evaluator: F) -> Result<Vec<f64>>
    where
        F: Fn(&ModelParams) -> Result<f64> + Sync,
    {
        let base = evaluator(&self.baseline)?;
        (0..self.train.len())
            .into_par_iter()
            .map(|i| Ok(evaluator(&self.loo_params(i)?)? - base))
            .collect()
    }

    /// Label-flip deltas for every index, computed in parallel, in index order.
    pub fn all_label_flips<F>(&self, evaluator: F) -> Result<Vec<f64>>
    where
        F: Fn(&ModelParams) -> Result<f64> + Sync,
    {
        let base = evaluator(&self.baseline)?;
        (0..self.train.len())
            .into_par_iter()
            .map(|j| Ok(evaluator(&self.flip_params(j)?)? - base))
            .collect()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.train.len() {
            return Err(AuditError::Domain(format!(
                "index {i} out of range for {} samples",
                self.train.len()
            )));
        }
        Ok(())
    }
}

/// Retrains with and without index `i` and returns the evaluator difference.
pub fn loo_oracle<F>(train: &Dataset, i: usize, config: &TrainConfig, evaluator: F) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    RetrainOracle::new(train, *config)?.leave_one_out(i, evaluator)
}

/// Retrains with the label of `j` flipped and returns the evaluator difference.
pub fn label_flip_oracle<F>(
    train: &Dataset,
    j: usize,
    config: &TrainConfig,
    evaluator: F,
) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    RetrainOracle::new(train, *config)?.flip_label(j, evaluator)
}

/// Convenience: the augmented feature vector of a sample.
pub fn augmented_features(z: &Sample) -> DVector<f64> {
    augmented(&z.features)
}

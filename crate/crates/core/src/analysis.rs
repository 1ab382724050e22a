//! Subspace-vs-full-space diagnostics and confidence metrics.
//!
//! With `x_*` the full-space optimum found from `x_init` and `y_*` the
//! subspace optimum found from `y = 0`:
//!
//! ```text
//! γ_OP = ‖A y_*‖ / ‖x_* - x_init‖
//! γ_PI = ‖x_* - (A y_* + x_init)‖ / ‖x_* - x_init‖
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{gram_schmidt_rows, log_sum_exp, LogitBundle, Objective, QuadraticObjective};
use crate::optim::{cmaes_run, BudgetSpec};
use crate::projection::{wrap_objective, SubspaceProjection, XInitSource};
use crate::rng::SeededStream;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn journey(x_star: &[f64], projection: &SubspaceProjection) -> Result<f64> {
    if x_star.len() != projection.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: projection.ambient_dim(),
            got: x_star.len(),
        });
    }
    let den = x_star.iter().zip(projection.x_init()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if !(den > 0.0) {
        return Err(Error::DegenerateStudy("full-space optimum coincides with x_init".into()));
    }
    Ok(den)
}

/// Relative optimization progress of the subspace search.
pub fn gamma_op(x_star: &[f64], y_star: &[f64], projection: &SubspaceProjection) -> Result<f64> {
    let den = journey(x_star, projection)?;
    Ok(norm(&projection.apply(y_star)?) / den)
}

/// Relative post-hoc improvement still available after the subspace search.
pub fn gamma_pi(x_star: &[f64], y_star: &[f64], projection: &SubspaceProjection) -> Result<f64> {
    let den = journey(x_star, projection)?;
    let lifted = projection.lift(y_star)?;
    let gap = x_star.iter().zip(&lifted).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(gap / den)
}

/// Exact subspace optimum of a quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticOracle {
    pub y_star: Vec<f64>,
    pub f_bbt: f64,
    pub gamma_op: f64,
    pub gamma_pi: f64,
}

/// `y* = (AᵀHA)⁻¹ AᵀH (x_opt - x_init)`, with gammas taken against the
/// exact full-space optimum `x_opt`.
pub fn quadratic_oracle(objective: &QuadraticObjective, projection: &SubspaceProjection) -> Result<QuadraticOracle> {
    let d = projection.ambient_dim();
    let k = projection.subspace_dim();
    if objective.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: objective.dim(),
        });
    }
    let a = DMatrix::from_row_slice(d, k, projection.entries());
    let mut ha = DMatrix::zeros(d, k);
    for j in 0..k {
        let col: Vec<f64> = a.column(j).iter().copied().collect();
        ha.set_column(j, &DVector::from_vec(objective.hessian_apply(&col)));
    }
    let r: Vec<f64> = objective.optimum().iter().zip(projection.x_init()).map(|(o, x)| o - x).collect();
    let gram = a.transpose() * &ha;
    let rhs = ha.transpose() * DVector::from_vec(r);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateStudy("AᵀHA is not positive definite".into()))?;
    let y_star: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
    let f_bbt = objective.loss(&projection.lift(&y_star)?)?;
    Ok(QuadraticOracle {
        gamma_op: gamma_op(objective.optimum(), &y_star, projection)?,
        gamma_pi: gamma_pi(objective.optimum(), &y_star, projection)?,
        y_star,
        f_bbt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanPlacement {
    /// `x_opt ∈ x_init + span(A)`.
    InSpan,
    /// `x_opt - x_init ⟂ span(A)`, with a Hessian direction coupling the two.
    OffSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticFamilySpec {
    pub d: usize,
    pub d_tilde: usize,
    pub placement: SpanPlacement,
    /// Extra curvature along `w = (u + n)/√2`, `u` in the span, `n` outside.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// `‖x_opt - x_init‖`.
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default)]
    pub x_init_source: XInitSource,
}

fn default_kappa() -> f64 {
    9.0
}

fn default_offset() -> f64 {
    1.0
}

/// Seeded quadratic plus projection with a known subspace gap.
///
/// Off-span, the subspace optimum trades the coupled direction against the
/// unreachable one and lands at Euclidean distance
/// `offset · √(1 + (κ/(2+κ))²)` from `x_opt`, so `γ_PI > 1` for any `κ > 0`.
pub fn quadratic_family(spec: &QuadraticFamilySpec, seed: u64) -> Result<(QuadraticObjective, SubspaceProjection)> {
    let (d, k) = (spec.d, spec.d_tilde);
    if k == 0 || k >= d {
        return Err(Error::InvalidSpec(format!("need 0 < d_tilde < d, got d={d}, d_tilde={k}")));
    }
    if !(spec.offset > 0.0) || !(spec.kappa >= 0.0) {
        return Err(Error::InvalidSpec("offset must be positive and kappa non-negative".into()));
    }
    let projection = SubspaceProjection::new(d, k, seed, &spec.x_init_source)?;
    let mut rng = SeededStream::derive(seed, 51);

    // Orthonormal basis of span(A) followed by one extra direction outside it.
    let mut q = vec![0.0; (k + 1) * d];
    for j in 0..k {
        for i in 0..d {
            q[j * d + i] = projection.entry(i, j);
        }
    }
    rng.fill_normal(&mut q[k * d..]);
    gram_schmidt_rows(&mut q, k + 1, d)?;
    let coeffs = rng.normal_vec(k);
    let cn = norm(&coeffs);
    let mut u = vec![0.0; d];
    for (j, c) in coeffs.iter().enumerate() {
        u.iter_mut().zip(&q[j * d..(j + 1) * d]).for_each(|(ui, qi)| *ui += c / cn * qi);
    }
    let n_dir = &q[k * d..];

    let target = match spec.placement {
        SpanPlacement::InSpan => &u,
        SpanPlacement::OffSpan => n_dir,
    };
    let x_opt: Vec<f64> = projection.x_init().iter().zip(target).map(|(x, t)| x + spec.offset * t).collect();
    let w: Vec<f64> = u.iter().zip(n_dir).map(|(a, b)| a + b).collect();
    let objective = QuadraticObjective::isotropic(x_opt).with_direction(w, spec.kappa)?;
    debug_assert!(dot(&u, n_dir).abs() < 1e-10);
    Ok((objective, projection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBudgets {
    pub full: BudgetSpec,
    pub subspace: BudgetSpec,
    pub sigma_full: f64,
    pub sigma_subspace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceStudyResult {
    pub f_ps: f64,
    pub f_bbt: f64,
    pub gamma_op: f64,
    pub gamma_pi: f64,
    pub seed: u64,
    pub full_evals: u64,
    pub subspace_evals: u64,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
}

/// CMA-ES in the full space from `x_init` and in the subspace from `y = 0`.
pub fn run_subspace_study(
    objective: &dyn Objective,
    projection: &SubspaceProjection,
    budgets: &StudyBudgets,
    seed: u64,
) -> Result<SubspaceStudyResult> {
    if budgets.full.max_evals == 0 || budgets.subspace.max_evals == 0 {
        return Err(Error::DegenerateStudy("both solvers need a nonzero budget".into()));
    }
    if objective.dim() != projection.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: projection.ambient_dim(),
            got: objective.dim(),
        });
    }
    let full = cmaes_run(objective, projection.x_init().to_vec(), budgets.sigma_full, &budgets.full, seed)?;
    let wrapped = wrap_objective(projection, objective)?;
    let sub = cmaes_run(
        &wrapped,
        vec![0.0; projection.subspace_dim()],
        budgets.sigma_subspace,
        &budgets.subspace,
        seed,
    )
    .map_err(|e| Error::DegenerateStudy(format!("subspace solver failed (full-space f_ps={}): {e}", full.best_loss)))?;
    Ok(SubspaceStudyResult {
        f_ps: full.best_loss,
        f_bbt: sub.best_loss,
        gamma_op: gamma_op(&full.best_x, &sub.best_x, projection)?,
        gamma_pi: gamma_pi(&full.best_x, &sub.best_x, projection)?,
        seed,
        full_evals: full.evals,
        subspace_evals: sub.evals,
        x_star: full.best_x,
        y_star: sub.best_x,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceDiagnostics {
    /// Mean full-vocabulary probability of the predicted verbalizer.
    pub prediction_probability: f64,
    /// Mean rank (1 = largest) of the predicted verbalizer's logit in the
    /// whole vocabulary; ties count only strictly greater logits.
    pub global_rank: f64,
    pub n_examples: usize,
}

/// Predicted verbalizer: the first verbalizer attaining the largest logit.
pub fn predicted_verbalizer(bundle: &LogitBundle) -> usize {
    let mut best = bundle.verbalizer_ids[0];
    for &v in &bundle.verbalizer_ids[1..] {
        if bundle.logits[v] > bundle.logits[best] {
            best = v;
        }
    }
    best
}

pub fn confidence_diagnostics(bundles: &[LogitBundle]) -> Result<ConfidenceDiagnostics> {
    if bundles.is_empty() {
        return Err(Error::InvalidInput("confidence diagnostics need at least one example".into()));
    }
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for b in bundles {
        b.validate()?;
        let z = predicted_verbalizer(b);
        let lz = b.logits[z];
        p_sum += (lz - log_sum_exp(b.logits.iter().copied())).exp();
        r_sum += (b.logits.iter().filter(|&&l| l > lz).count() + 1) as f64;
    }
    let n = bundles.len() as f64;
    Ok(ConfidenceDiagnostics {
        prediction_probability: p_sum / n,
        global_rank: r_sum / n,
        n_examples: bundles.len(),
    })
}

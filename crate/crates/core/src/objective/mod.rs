//! Black-box objectives over the prompt space.
//!
//! An [`Objective`] maps a point of `R^d` to a scalar loss. Search algorithms
//! only ever call [`Objective::evaluate`]; gradients are exposed for analysis
//! (intrinsic-dimension estimation) and never consumed by the optimizers.

mod landscape;
mod loss;
mod quadratic;
mod synthetic;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use landscape::{LogitLandscape, LogitLandscapeSpec, LossKind};
pub use loss::{confidence_regularized_loss, cross_entropy_loss, log_sum_exp, LogitBundle};
pub use quadratic::QuadraticObjective;
pub use synthetic::{gram_schmidt_rows, InnerFunction, ShiftSpec, SyntheticObjective, SyntheticObjectiveSpec};

/// A point in the full decision space. Always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PromptVector(Vec<f64>);

impl PromptVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PromptVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<PromptVector> for Vec<f64> {
    fn from(p: PromptVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for PromptVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Shared evaluation counter. Clones observe the same count.
#[derive(Debug, Clone, Default)]
pub struct EvalCounter(Arc<AtomicU64>);

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "non-finite entry {} at index {i}",
            x[i]
        ))),
        None => Ok(()),
    }
}

/// Validates length and finiteness of a query point.
pub fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    check_finite(x)
}

/// The black-box evaluation contract.
///
/// Implementors provide [`loss`](Objective::loss), the raw full-batch loss,
/// and a counter; `evaluate` adds validation and accounting on top.
pub trait Objective: Send + Sync {
    /// Ambient dimension `d`.
    fn dim(&self) -> usize;

    fn counter(&self) -> &EvalCounter;

    /// Raw loss without validation or accounting.
    fn loss(&self, x: &[f64]) -> Result<f64>;

    /// One counted query of the objective.
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim())?;
        self.counter().increment();
        self.loss(x)
    }

    fn evaluations(&self) -> u64 {
        self.counter().get()
    }

    fn analytic_gradient(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::UnsupportedMode(
            "analytic gradient is not available for this objective".into(),
        ))
    }

    /// Per-example vocabulary logits, for objectives backed by a classifier.
    fn logit_bundles(&self, _x: &[f64]) -> Result<Vec<LogitBundle>> {
        Err(Error::UnsupportedMode(
            "this objective does not expose logits".into(),
        ))
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn counter(&self) -> &EvalCounter {
        (**self).counter()
    }
    fn loss(&self, x: &[f64]) -> Result<f64> {
        (**self).loss(x)
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        (**self).evaluate(x)
    }
    fn analytic_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).analytic_gradient(x)
    }
    fn logit_bundles(&self, x: &[f64]) -> Result<Vec<LogitBundle>> {
        (**self).logit_bundles(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientMode {
    Analytic,
    /// Central differences; `h = None` picks `1e-4 * (1 + ‖x‖∞)`.
    CentralDifference { h: Option<f64> },
}

/// Default central-difference step for `x`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    let inf = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-4 * (1.0 + inf)
}

/// Gradient of `objective` at `x`.
///
/// Finite-difference probes call the raw loss and are not counted against the
/// search budget.
pub fn gradient(objective: &dyn Objective, x: &[f64], mode: GradientMode) -> Result<Vec<f64>> {
    check_point(x, objective.dim())?;
    match mode {
        GradientMode::Analytic => objective.analytic_gradient(x),
        GradientMode::CentralDifference { h } => {
            let h = h.unwrap_or_else(|| default_fd_step(x));
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidSpec(format!("finite-difference step must be positive, got {h}")));
            }
            let mut probe = x.to_vec();
            let mut g = Vec::with_capacity(x.len());
            for i in 0..x.len() {
                let xi = probe[i];
                probe[i] = xi + h;
                let up = objective.loss(&probe)?;
                probe[i] = xi - h;
                let down = objective.loss(&probe)?;
                probe[i] = xi;
                g.push((up - down) / (2.0 * h));
            }
            Ok(g)
        }
    }
}

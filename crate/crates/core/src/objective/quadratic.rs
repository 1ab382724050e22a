use super::synthetic::dot;
use super::{EvalCounter, Objective};
use crate::error::{Error, Result};

/// `f(x) = (x - x_opt)ᵀ H (x - x_opt)` with `H = I + Σ κ_i w_i w_iᵀ`.
///
/// The low-rank terms give the quadratic a controllable anisotropy, which is
/// what makes the subspace optimum drift away from the full-space optimum.
#[derive(Debug)]
pub struct QuadraticObjective {
    x_opt: Vec<f64>,
    directions: Vec<(Vec<f64>, f64)>,
    counter: EvalCounter,
}

impl QuadraticObjective {
    pub fn isotropic(x_opt: Vec<f64>) -> Self {
        Self {
            x_opt,
            directions: Vec::new(),
            counter: EvalCounter::new(),
        }
    }

    /// Adds `kappa · w wᵀ` to the Hessian; `w` is normalized here.
    pub fn with_direction(mut self, w: Vec<f64>, kappa: f64) -> Result<Self> {
        if w.len() != self.x_opt.len() {
            return Err(Error::DimensionMismatch {
                expected: self.x_opt.len(),
                got: w.len(),
            });
        }
        if !(kappa >= 0.0) {
            return Err(Error::InvalidSpec(format!("kappa must be >= 0, got {kappa}")));
        }
        let n = dot(&w, &w).sqrt();
        if !(n > 0.0) {
            return Err(Error::InvalidSpec("direction must be nonzero".into()));
        }
        self.directions.push((w.into_iter().map(|v| v / n).collect(), kappa));
        Ok(self)
    }

    pub fn optimum(&self) -> &[f64] {
        &self.x_opt
    }

    /// `H v`.
    pub fn hessian_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for (w, kappa) in &self.directions {
            let c = kappa * dot(w, v);
            out.iter_mut().zip(w).for_each(|(o, wi)| *o += c * wi);
        }
        out
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.x_opt.len()
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn loss(&self, x: &[f64]) -> Result<f64> {
        let r: Vec<f64> = x.iter().zip(&self.x_opt).map(|(a, b)| a - b).collect();
        let mut v = dot(&r, &r);
        for (w, kappa) in &self.directions {
            v += kappa * dot(w, &r).powi(2);
        }
        Ok(v)
    }

    fn analytic_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r: Vec<f64> = x.iter().zip(&self.x_opt).map(|(a, b)| a - b).collect();
        Ok(self.hessian_apply(&r).into_iter().map(|v| 2.0 * v).collect())
    }
}

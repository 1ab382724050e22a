//! Reference CMA-ES with default hyperparameters (Hansen, "The CMA Evolution
//! Strategy: A Tutorial", 2016): weighted recombination, cumulative step-size
//! adaptation, rank-one and rank-μ covariance updates.
//!
//! Memory and time are quadratic in `n`, so the dimension is capped at
//! [`CMAES_DIMENSION_LIMIT`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{evaluate_batch, rank_by_loss, BudgetSpec, Tracker};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::SeededStream;

pub const CMAES_DIMENSION_LIMIT: usize = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaEsParams {
    pub n: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaEsParams {
    pub fn default_for(n: usize) -> Self {
        let nf = n as f64;
        let lambda = 4 + (3.0 * nf.ln()).floor() as usize;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmaEs {
    params: CmaEsParams,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: u64,
    evals: u64,
    eigen_evals: u64,
    rng: SeededStream,
}

impl CmaEs {
    pub fn new(x0: Vec<f64>, sigma0: f64, seed: u64) -> Result<Self> {
        let n = x0.len();
        if n > CMAES_DIMENSION_LIMIT {
            return Err(Error::DimensionGuard {
                n,
                limit: CMAES_DIMENSION_LIMIT,
            });
        }
        if n == 0 {
            return Err(Error::InvalidSpec("CMA-ES needs at least one dimension".into()));
        }
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::InvalidSpec(format!("sigma0 must be positive, got {sigma0}")));
        }
        Ok(Self {
            params: CmaEsParams::default_for(n),
            mean: DVector::from_vec(x0),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            evals: 0,
            eigen_evals: 0,
            rng: SeededStream::new(seed),
        })
    }

    pub fn params(&self) -> &CmaEsParams {
        &self.params
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    fn refresh_eigensystem(&mut self) {
        let p = &self.params;
        let gap = p.lambda as f64 / ((p.c_1 + p.c_mu) * p.n as f64 * 10.0);
        if self.generation > 0 && ((self.evals - self.eigen_evals) as f64) < gap {
            return;
        }
        self.eigen_evals = self.evals;
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        self.cov = sym;
        self.basis = eig.eigenvectors;
        self.scales = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
    }

    pub fn step(&mut self, objective: &dyn Objective) -> Result<Vec<f64>> {
        let mut t = Tracker::new();
        self.step_tracked(objective, &mut t)
    }

    /// One generation: `λ` evaluations. Returns the losses in trial order.
    pub(crate) fn step_tracked(&mut self, objective: &dyn Objective, tracker: &mut Tracker) -> Result<Vec<f64>> {
        self.refresh_eigensystem();
        let n = self.params.n;
        let lambda = self.params.lambda;

        let mut rng = self.rng.clone();
        let mut steps = Vec::with_capacity(lambda);
        let mut points = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::from_vec(rng.normal_vec(n));
            let y = &self.basis * z.component_mul(&self.scales);
            points.push((&self.mean + &y * self.sigma).as_slice().to_vec());
            steps.push(y);
        }
        let losses = evaluate_batch(objective, &points)?;
        for (p, l) in points.iter().zip(&losses) {
            tracker.observe(p, *l, self.sigma);
        }
        self.rng = rng;
        self.evals += lambda as u64;
        self.generation += 1;

        let p = &self.params;
        let ranking = rank_by_loss(&losses);
        let mut y_w = DVector::zeros(n);
        for (w, &i) in p.weights.iter().zip(&ranking) {
            y_w.axpy(*w, &steps[i], 1.0);
        }
        self.mean.axpy(self.sigma, &y_w, 1.0);

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt_y = &self.basis * (self.basis.tr_mul(&y_w)).component_div(&self.scales);
        let cs = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + inv_sqrt_y * (cs * (2.0 - cs) * p.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - cs).powf(2.0 * self.generation as f64);
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let cc = p.c_c;
        self.p_c *= 1.0 - cc;
        if h_sigma {
            self.p_c.axpy((cc * (2.0 - cc) * p.mu_eff).sqrt(), &y_w, 1.0);
        }

        let delta_h = if h_sigma { 0.0 } else { cc * (2.0 - cc) };
        let old_weight = 1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h;
        let mut cov = &self.cov * old_weight;
        cov.ger(p.c_1, &self.p_c, &self.p_c, 1.0);
        for (w, &i) in p.weights.iter().zip(&ranking) {
            cov.ger(p.c_mu * w, &steps[i], &steps[i], 1.0);
        }
        self.cov = cov;

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        Ok(losses)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesResult {
    pub best_x: Vec<f64>,
    pub best_loss: f64,
    pub evals: u64,
    pub final_sigma: f64,
    pub final_mean: Vec<f64>,
}

/// Runs CMA-ES until the budget (or target) is hit and returns the best point.
pub fn cmaes_run(objective: &dyn Objective, x0: Vec<f64>, sigma0: f64, budget: &BudgetSpec, seed: u64) -> Result<CmaesResult> {
    let mut es = CmaEs::new(x0, sigma0, seed)?;
    let mut tracker = Tracker::new();
    while tracker.evals + es.params.lambda as u64 <= budget.max_evals {
        if budget.target_loss.is_some_and(|t| tracker.best_loss <= t) {
            break;
        }
        if !super::sigma_in_range(es.sigma) {
            break;
        }
        es.step_tracked(objective, &mut tracker)?;
    }
    Ok(CmaesResult {
        best_x: tracker.best_x,
        best_loss: tracker.best_loss,
        evals: tracker.evals,
        final_sigma: es.sigma,
        final_mean: es.mean.as_slice().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{EvalCounter, QuadraticObjective};

    #[test]
    fn default_parameters_n10() {
        let p = CmaEsParams::default_for(10);
        assert_eq!(p.lambda, 10);
        assert_eq!(p.mu, 5);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.weights.windows(2).all(|w| w[0] > w[1]));
        assert!(p.c_1 + p.c_mu <= 1.0);
    }

    #[test]
    fn dimension_guard() {
        assert!(matches!(
            CmaEs::new(vec![0.0; 10_000], 1.0, 0),
            Err(Error::DimensionGuard { n: 10_000, .. })
        ));
    }

    #[test]
    fn sphere_n10() {
        let f = QuadraticObjective::isotropic(vec![0.0; 10]);
        let r = cmaes_run(&f, vec![1.0; 10], 0.5, &BudgetSpec::evals(5000), 1).unwrap();
        assert!(r.best_loss < 1e-8, "{}", r.best_loss);
        assert!(r.evals <= 5000);
    }

    #[test]
    fn constant_objective_keeps_sigma() {
        struct Flat(EvalCounter);
        impl Objective for Flat {
            fn dim(&self) -> usize {
                5
            }
            fn counter(&self) -> &EvalCounter {
                &self.0
            }
            fn loss(&self, _x: &[f64]) -> Result<f64> {
                Ok(1.0)
            }
        }
        let f = Flat(EvalCounter::new());
        let r = cmaes_run(&f, vec![0.0; 5], 1.0, &BudgetSpec::evals(3000), 2).unwrap();
        assert!(r.final_mean.iter().all(|v| v.is_finite()));
        assert!(r.final_sigma > 1e-3 && r.final_sigma.is_finite(), "{}", r.final_sigma);
    }
}

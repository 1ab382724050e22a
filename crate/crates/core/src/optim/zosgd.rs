use rayon::prelude::*;

use super::Tracker;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::SeededStream;

/// Zeroth-order SGD with a Gaussian-smoothing forward-difference estimator:
/// `ĝ = (1/q) Σ_j (f(x + μ u_j) - f(x)) / μ · u_j`, then `x ← x - lr ĝ`.
#[derive(Debug, Clone)]
pub struct Zosgd {
    x: Vec<f64>,
    lr: f64,
    smoothing: f64,
    q: usize,
    rng: SeededStream,
}

/// Result of one gradient estimate.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub f0: f64,
    pub gradient: Vec<f64>,
    /// Probe points in evaluation order, paired with their losses.
    pub probes: Vec<(Vec<f64>, f64)>,
}

/// Estimates `∇f(x)` with `q + 1` evaluations.
pub fn estimate_gradient(
    objective: &dyn Objective,
    x: &[f64],
    smoothing: f64,
    q: usize,
    rng: &mut SeededStream,
) -> Result<GradientEstimate> {
    if q == 0 {
        return Err(Error::InvalidSpec("ZOSGD needs q >= 1".into()));
    }
    if !(smoothing > 0.0) {
        return Err(Error::InvalidSpec(format!("smoothing must be positive, got {smoothing}")));
    }
    let directions: Vec<Vec<f64>> = (0..q).map(|_| rng.normal_vec(x.len())).collect();
    let f0 = objective.evaluate(x)?;
    let probes: Vec<Vec<f64>> = directions
        .iter()
        .map(|u| x.iter().zip(u).map(|(a, b)| a + smoothing * b).collect())
        .collect();
    let losses: Vec<f64> = probes.par_iter().map(|p| objective.evaluate(p)).collect::<Result<_>>()?;
    let mut gradient = vec![0.0; x.len()];
    for (u, fj) in directions.iter().zip(&losses) {
        let c = (fj - f0) / smoothing / q as f64;
        gradient.iter_mut().zip(u).for_each(|(g, ui)| *g += c * ui);
    }
    Ok(GradientEstimate {
        f0,
        gradient,
        probes: probes.into_iter().zip(losses).collect(),
    })
}

impl Zosgd {
    pub fn new(x0: Vec<f64>, lr: f64, smoothing: f64, q: usize, seed: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidSpec("ZOSGD needs q >= 1".into()));
        }
        if !(lr > 0.0) || !(smoothing > 0.0) {
            return Err(Error::InvalidSpec(format!("need lr > 0 and smoothing > 0, got {lr}, {smoothing}")));
        }
        Ok(Self {
            x: x0,
            lr,
            smoothing,
            q,
            rng: SeededStream::new(seed),
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn step(&mut self, objective: &dyn Objective) -> Result<GradientEstimate> {
        let mut t = Tracker::new();
        self.step_tracked(objective, &mut t)
    }

    pub(crate) fn step_tracked(&mut self, objective: &dyn Objective, tracker: &mut Tracker) -> Result<GradientEstimate> {
        let mut rng = self.rng.clone();
        let est = estimate_gradient(objective, &self.x, self.smoothing, self.q, &mut rng)?;
        tracker.observe(&self.x, est.f0, self.smoothing);
        for (p, l) in &est.probes {
            tracker.observe(p, *l, self.smoothing);
        }
        self.rng = rng;
        self.x.iter_mut().zip(&est.gradient).for_each(|(x, g)| *x -= self.lr * g);
        Ok(est)
    }
}

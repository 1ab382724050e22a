use super::{evaluate_batch, rank_by_loss, Tracker};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::SeededStream;

/// (μ/μ, λ) self-adaptive ES. Each trial carries its own step size
/// `σ_i = σ · exp(δ_i / τ)`; the next mean and σ are the plain averages over
/// the μ best trials.
#[derive(Debug, Clone)]
pub struct SaEs {
    x: Vec<f64>,
    sigma: f64,
    tau: f64,
    lambda: usize,
    mu: usize,
    rng: SeededStream,
}

/// What one generation produced, in trial order.
#[derive(Debug, Clone)]
pub struct Generation {
    pub points: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    pub losses: Vec<f64>,
    /// Trial indices sorted by `(loss, index)`.
    pub ranking: Vec<usize>,
}

impl SaEs {
    pub fn new(x0: Vec<f64>, sigma0: f64, tau: f64, lambda: usize, mu: usize, seed: u64) -> Result<Self> {
        if lambda < 2 || mu == 0 || mu > lambda {
            return Err(Error::InvalidSpec(format!("need lambda >= 2 and 1 <= mu <= lambda, got {lambda}, {mu}")));
        }
        if !(sigma0 > 0.0) || !(tau > 0.0) {
            return Err(Error::InvalidSpec(format!("need sigma0 > 0 and tau > 0, got {sigma0}, {tau}")));
        }
        Ok(Self {
            x: x0,
            sigma: sigma0,
            tau,
            lambda,
            mu,
            rng: SeededStream::new(seed),
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.x
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn step(&mut self, objective: &dyn Objective) -> Result<Generation> {
        let mut t = Tracker::new();
        self.step_tracked(objective, &mut t)
    }

    pub(crate) fn step_tracked(&mut self, objective: &dyn Objective, tracker: &mut Tracker) -> Result<Generation> {
        let mut rng = self.rng.clone();
        let mut sigmas = Vec::with_capacity(self.lambda);
        let mut points = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let sigma_i = self.sigma * (rng.normal() / self.tau).exp();
            let x_i: Vec<f64> = self.x.iter().map(|xj| xj + sigma_i * rng.normal()).collect();
            sigmas.push(sigma_i);
            points.push(x_i);
        }
        let losses = evaluate_batch(objective, &points)?;
        for (p, l) in points.iter().zip(&losses) {
            tracker.observe(p, *l, self.sigma);
        }
        self.rng = rng;

        let ranking = rank_by_loss(&losses);
        let parents = &ranking[..self.mu];
        let inv = 1.0 / self.mu as f64;
        let mut mean = vec![0.0; self.x.len()];
        for &i in parents {
            mean.iter_mut().zip(&points[i]).for_each(|(m, p)| *m += p);
        }
        mean.iter_mut().for_each(|m| *m *= inv);
        self.x = mean;
        self.sigma = parents.iter().map(|&i| sigmas[i]).sum::<f64>() * inv;

        Ok(Generation {
            points,
            sigmas,
            losses,
            ranking,
        })
    }
}

use super::Tracker;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::SeededStream;

/// Elitist (1+1)-ES with the 1/5 success rule:
/// `σ ← σ · exp((s - 1/5) / τ)`, `s = 1{f(x + σu) ≤ f(x)}`.
#[derive(Debug, Clone)]
pub struct OnePlusOne {
    x: Vec<f64>,
    fx: f64,
    sigma: f64,
    tau: f64,
    rng: SeededStream,
}

impl OnePlusOne {
    /// Evaluates `x0` (one evaluation) and returns the initial state.
    pub fn init(objective: &dyn Objective, x0: Vec<f64>, sigma0: f64, tau: f64, seed: u64) -> Result<Self> {
        let mut t = Tracker::new();
        Self::start(objective, x0, sigma0, tau, seed, &mut t)
    }

    pub(crate) fn start(
        objective: &dyn Objective,
        x0: Vec<f64>,
        sigma0: f64,
        tau: f64,
        seed: u64,
        tracker: &mut Tracker,
    ) -> Result<Self> {
        if !(sigma0 > 0.0) || !(tau > 0.0) {
            return Err(Error::InvalidSpec(format!("need sigma0 > 0 and tau > 0, got {sigma0}, {tau}")));
        }
        let fx = objective.evaluate(&x0)?;
        tracker.observe(&x0, fx, sigma0);
        Ok(Self {
            x: x0,
            fx,
            sigma: sigma0,
            tau,
            rng: SeededStream::new(seed),
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn loss(&self) -> f64 {
        self.fx
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// One mutation, one evaluation. On error the state is left untouched.
    pub fn step(&mut self, objective: &dyn Objective) -> Result<bool> {
        let mut t = Tracker::new();
        self.step_tracked(objective, &mut t)
    }

    pub(crate) fn step_tracked(&mut self, objective: &dyn Objective, tracker: &mut Tracker) -> Result<bool> {
        let mut rng = self.rng.clone();
        let candidate: Vec<f64> = self.x.iter().map(|xi| xi + self.sigma * rng.normal()).collect();
        let fc = objective.evaluate(&candidate)?;
        tracker.observe(&candidate, fc, self.sigma);
        self.rng = rng;

        let success = fc <= self.fx;
        if success {
            self.x = candidate;
            self.fx = fc;
        }
        self.sigma = next_sigma(self.sigma, success, self.tau);
        Ok(success)
    }
}

pub(crate) fn next_sigma(sigma: f64, success: bool, tau: f64) -> f64 {
    let s = if success { 1.0 } else { 0.0 };
    sigma * ((s - 0.2) / tau).exp()
}

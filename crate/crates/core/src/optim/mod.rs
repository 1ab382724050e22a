//! Search algorithms and the budgeted run loop.
//!
//! All algorithms draw from a [`SeededStream`] and never reorder draws
//! between the RNG and the samples, so a `(config, seed)` pair fixes the
//! trajectory. Trial evaluations inside one step may run in parallel; results
//! are always reassembled in trial order before any selection.

mod cmaes;
mod one_plus_one;
mod saes;
mod zosgd;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::{SeededStream, SAMPLER_ID};

pub use cmaes::{cmaes_run, CmaEs, CmaEsParams, CmaesResult, CMAES_DIMENSION_LIMIT};
pub use one_plus_one::OnePlusOne;
pub use saes::SaEs;
pub use zosgd::{estimate_gradient, Zosgd};

/// Lower bound on σ before a run is aborted.
pub const SIGMA_MIN: f64 = 1e-300;
/// Upper bound on σ before a run is aborted.
pub const SIGMA_MAX: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingVariant {
    Standard,
    IdAware,
}

/// Step-size damping: `τ = √(2d)` (standard) or `τ = √(2d̃)` (ID-aware).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingMode {
    pub variant: DampingVariant,
    pub d: usize,
    pub d_tilde: Option<usize>,
}

impl DampingMode {
    pub fn standard(d: usize) -> Self {
        Self {
            variant: DampingVariant::Standard,
            d,
            d_tilde: None,
        }
    }

    pub fn id_aware(d: usize, d_tilde: usize) -> Self {
        Self {
            variant: DampingVariant::IdAware,
            d,
            d_tilde: Some(d_tilde),
        }
    }

    pub fn tau(&self) -> Result<f64> {
        let dim = match self.variant {
            DampingVariant::Standard => self.d,
            DampingVariant::IdAware => self
                .d_tilde
                .ok_or_else(|| Error::InvalidSpec("id_aware damping requires d_tilde".into()))?,
        };
        if dim == 0 {
            return Err(Error::InvalidSpec("damping dimension must be positive".into()));
        }
        Ok((2.0 * dim as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    #[serde(default = "default_max_evals")]
    pub max_evals: u64,
    #[serde(default)]
    pub target_loss: Option<f64>,
}

fn default_max_evals() -> u64 {
    5000
}

impl Default for BudgetSpec {
    fn default() -> Self {
        Self {
            max_evals: default_max_evals(),
            target_loss: None,
        }
    }
}

impl BudgetSpec {
    pub fn evals(max_evals: u64) -> Self {
        Self {
            max_evals,
            target_loss: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    OnePlusOne,
    Saes,
    Zosgd,
    Cmaes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialPoint {
    #[default]
    Zero,
    SeededNormal { scale: f64 },
    Explicit { values: Vec<f64> },
}

impl InitialPoint {
    pub fn materialize(&self, d: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            Self::Zero => Ok(vec![0.0; d]),
            Self::SeededNormal { scale } => Ok(SeededStream::derive(seed, 31)
                .normal_vec(d)
                .into_iter()
                .map(|v| v * scale)
                .collect()),
            Self::Explicit { values } => {
                crate::objective::check_point(values, d)?;
                Ok(values.clone())
            }
        }
    }
}

fn default_sigma0() -> f64 {
    1.0
}
fn default_lambda() -> usize {
    20
}
fn default_mu() -> usize {
    5
}
fn default_lr() -> f64 {
    1e-2
}
fn default_smoothing() -> f64 {
    1e-4
}
fn default_q() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_damping")]
    pub damping: DampingVariant,
    #[serde(default)]
    pub d_tilde: Option<usize>,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    #[serde(default = "default_mu")]
    pub mu: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: InitialPoint,
}

fn default_damping() -> DampingVariant {
    DampingVariant::Standard
}

impl OptimizerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            damping: DampingVariant::Standard,
            d_tilde: None,
            sigma0: default_sigma0(),
            lambda: default_lambda(),
            mu: default_mu(),
            lr: default_lr(),
            smoothing: default_smoothing(),
            q: default_q(),
            seed: 0,
            x0: InitialPoint::Zero,
        }
    }

    pub fn id_aware(mut self, d_tilde: usize) -> Self {
        self.damping = DampingVariant::IdAware;
        self.d_tilde = Some(d_tilde);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sigma0(mut self, sigma0: f64) -> Self {
        self.sigma0 = sigma0;
        self
    }

    pub fn damping_mode(&self, d: usize) -> DampingMode {
        DampingMode {
            variant: self.damping,
            d,
            d_tilde: self.d_tilde,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(Error::InvalidSpec(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        if self.damping == DampingVariant::IdAware && self.d_tilde.unwrap_or(0) == 0 {
            return Err(Error::InvalidSpec("id_aware damping requires a positive d_tilde".into()));
        }
        match self.algorithm {
            Algorithm::Saes if self.lambda < 2 || self.mu == 0 || self.mu > self.lambda => Err(Error::InvalidSpec(
                format!("SaES needs lambda >= 2 and 1 <= mu <= lambda, got lambda={} mu={}", self.lambda, self.mu),
            )),
            Algorithm::Zosgd if self.q == 0 => Err(Error::InvalidSpec("ZOSGD needs q >= 1".into())),
            Algorithm::Zosgd if !(self.lr > 0.0) || !(self.smoothing > 0.0) => {
                Err(Error::InvalidSpec("ZOSGD needs lr > 0 and smoothing > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub eval_index: u64,
    pub best_loss: f64,
    pub sigma: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Termination {
    BudgetExhausted,
    TargetReached,
    StepSizeOutOfRange { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub dim: usize,
    pub tau: Option<f64>,
    pub sampler: String,
    pub cmaes: Option<CmaEsParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_x: Vec<f64>,
    pub best_loss: f64,
    pub final_sigma: f64,
    pub evals: u64,
    pub termination: Termination,
    pub trajectory: Vec<TrajectoryPoint>,
    pub metadata: RunMetadata,
}

/// Records every evaluation and keeps the best point seen.
pub(crate) struct Tracker {
    started: Instant,
    best_loss: f64,
    best_x: Vec<f64>,
    evals: u64,
    trajectory: Vec<TrajectoryPoint>,
}

impl Tracker {
    fn new() -> Self {
        Self {
            started: Instant::now(),
            best_loss: f64::INFINITY,
            best_x: Vec::new(),
            evals: 0,
            trajectory: Vec::new(),
        }
    }

    pub(crate) fn observe(&mut self, x: &[f64], loss: f64, sigma: f64) {
        self.evals += 1;
        if loss < self.best_loss || self.best_x.is_empty() {
            self.best_loss = loss;
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
        }
        self.trajectory.push(TrajectoryPoint {
            eval_index: self.evals,
            best_loss: self.best_loss,
            sigma,
            wall_ms: self.started.elapsed().as_millis() as u64,
        });
    }
}

fn sigma_in_range(sigma: f64) -> bool {
    sigma.is_finite() && (SIGMA_MIN..=SIGMA_MAX).contains(&sigma)
}

/// Runs one optimizer under `budget`. Budget exhaustion is a normal
/// termination; a step is only started if its whole evaluation cost fits.
pub fn run_optimizer(config: &OptimizerConfig, objective: &dyn Objective, budget: &BudgetSpec) -> Result<RunResult> {
    config.validate()?;
    if budget.max_evals == 0 {
        return Err(Error::InvalidSpec("max_evals must be positive".into()));
    }
    let d = objective.dim();
    let x0 = config.x0.materialize(d, config.seed)?;
    let mut tracker = Tracker::new();
    let target_hit = |t: &Tracker| budget.target_loss.is_some_and(|target| t.best_loss <= target);

    let mut tau = None;
    let mut cma_params = None;
    let (termination, final_sigma) = match config.algorithm {
        Algorithm::OnePlusOne => {
            let t = config.damping_mode(d).tau()?;
            tau = Some(t);
            let mut es = OnePlusOne::start(objective, x0, config.sigma0, t, config.seed, &mut tracker)?;
            loop {
                if target_hit(&tracker) {
                    break (Termination::TargetReached, es.sigma());
                }
                if !sigma_in_range(es.sigma()) {
                    break (Termination::StepSizeOutOfRange { sigma: es.sigma() }, es.sigma());
                }
                if tracker.evals + 1 > budget.max_evals {
                    break (Termination::BudgetExhausted, es.sigma());
                }
                es.step_tracked(objective, &mut tracker)?;
            }
        }
        Algorithm::Saes => {
            let t = config.damping_mode(d).tau()?;
            tau = Some(t);
            let mut es = SaEs::new(x0, config.sigma0, t, config.lambda, config.mu, config.seed)?;
            loop {
                if target_hit(&tracker) {
                    break (Termination::TargetReached, es.sigma());
                }
                if !sigma_in_range(es.sigma()) {
                    break (Termination::StepSizeOutOfRange { sigma: es.sigma() }, es.sigma());
                }
                if tracker.evals + es.lambda() as u64 > budget.max_evals {
                    break (Termination::BudgetExhausted, es.sigma());
                }
                es.step_tracked(objective, &mut tracker)?;
            }
        }
        Algorithm::Zosgd => {
            let mut opt = Zosgd::new(x0, config.lr, config.smoothing, config.q, config.seed)?;
            loop {
                if target_hit(&tracker) {
                    break (Termination::TargetReached, config.smoothing);
                }
                if tracker.evals + config.q as u64 + 1 > budget.max_evals {
                    break (Termination::BudgetExhausted, config.smoothing);
                }
                opt.step_tracked(objective, &mut tracker)?;
            }
        }
        Algorithm::Cmaes => {
            let mut es = CmaEs::new(x0, config.sigma0, config.seed)?;
            cma_params = Some(es.params().clone());
            loop {
                if target_hit(&tracker) {
                    break (Termination::TargetReached, es.sigma());
                }
                if !sigma_in_range(es.sigma()) {
                    break (Termination::StepSizeOutOfRange { sigma: es.sigma() }, es.sigma());
                }
                if tracker.evals + es.params().lambda as u64 > budget.max_evals {
                    break (Termination::BudgetExhausted, es.sigma());
                }
                es.step_tracked(objective, &mut tracker)?;
            }
        }
    };

    if let Termination::StepSizeOutOfRange { sigma } = termination {
        log::warn!("run aborted after {} evaluations: step size {sigma:e} left [{SIGMA_MIN:e}, {SIGMA_MAX:e}]", tracker.evals);
    }

    Ok(RunResult {
        best_x: tracker.best_x,
        best_loss: tracker.best_loss,
        final_sigma,
        evals: tracker.evals,
        termination,
        trajectory: tracker.trajectory,
        metadata: RunMetadata {
            algorithm: config.algorithm,
            seed: config.seed,
            dim: d,
            tau,
            sampler: SAMPLER_ID.to_string(),
            cmaes: cma_params,
        },
    })
}

/// Evaluates `points` (possibly in parallel) and returns losses in input order.
pub(crate) fn evaluate_batch(objective: &dyn Objective, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    points.par_iter().map(|p| objective.evaluate(p)).collect()
}

/// Indices sorted by `(loss, index)`.
pub(crate) fn rank_by_loss(losses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order
}

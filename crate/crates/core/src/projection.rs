//! Random-subspace reparameterization `x = x_init + A y`.
//!
//! `A` is `d × d̃` with entries i.i.d. uniform on `[-1/√d̃, 1/√d̃]`, drawn once
//! from a seed and frozen. Only the seed is ever persisted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{check_point, EvalCounter, LogitBundle, Objective};
use crate::rng::SeededStream;

const MATRIX_STREAM: u64 = 11;
const ANCHOR_STREAM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum XInitSource {
    #[default]
    Zero,
    SeededNormal { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub d: usize,
    pub d_tilde: usize,
    /// Falls back to the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub x_init_source: XInitSource,
}

#[derive(Debug, Clone)]
pub struct SubspaceProjection {
    d: usize,
    d_tilde: usize,
    /// Row-major `d × d̃`.
    matrix: Vec<f64>,
    x_init: Vec<f64>,
}

impl SubspaceProjection {
    pub fn new(d: usize, d_tilde: usize, seed: u64, x_init_source: &XInitSource) -> Result<Self> {
        if d_tilde == 0 || d_tilde > d {
            return Err(Error::InvalidSpec(format!("need 0 < d_tilde <= d, got d_tilde={d_tilde} d={d}")));
        }
        let bound = 1.0 / (d_tilde as f64).sqrt();
        let mut rng = SeededStream::derive(seed, MATRIX_STREAM);
        let matrix = (0..d * d_tilde).map(|_| rng.uniform(-bound, bound)).collect();
        let x_init = match x_init_source {
            XInitSource::Zero => vec![0.0; d],
            XInitSource::SeededNormal { scale } => {
                if !scale.is_finite() || *scale < 0.0 {
                    return Err(Error::InvalidSpec(format!("x_init scale must be finite and >= 0, got {scale}")));
                }
                SeededStream::derive(seed, ANCHOR_STREAM)
                    .normal_vec(d)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect()
            }
        };
        Ok(Self {
            d,
            d_tilde,
            matrix,
            x_init,
        })
    }

    pub fn from_config(config: &ProjectionConfig, run_seed: u64) -> Result<Self> {
        Self::new(config.d, config.d_tilde, config.seed.unwrap_or(run_seed), &config.x_init_source)
    }

    /// Explicit matrix given as `d` rows of length `d̃`.
    pub fn from_parts(rows: &[Vec<f64>], x_init: Vec<f64>) -> Result<Self> {
        let d = rows.len();
        if d != x_init.len() {
            return Err(Error::DimensionMismatch { expected: d, got: x_init.len() });
        }
        let d_tilde = rows.first().map_or(0, Vec::len);
        if d_tilde == 0 || rows.iter().any(|r| r.len() != d_tilde) {
            return Err(Error::InvalidSpec("projection rows must be nonempty and of equal length".into()));
        }
        Ok(Self {
            d,
            d_tilde,
            matrix: rows.concat(),
            x_init,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.d
    }

    pub fn subspace_dim(&self) -> usize {
        self.d_tilde
    }

    pub fn x_init(&self) -> &[f64] {
        &self.x_init
    }

    pub fn entries(&self) -> &[f64] {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.d_tilde + j]
    }

    /// `A y`.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_point(y, self.d_tilde)?;
        Ok(self
            .matrix
            .chunks_exact(self.d_tilde)
            .map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Aᵀ v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_point(v, self.d)?;
        let mut out = vec![0.0; self.d_tilde];
        for (row, &c) in self.matrix.chunks_exact(self.d_tilde).zip(v) {
            out.iter_mut().zip(row).for_each(|(o, a)| *o += c * a);
        }
        Ok(out)
    }

    /// `x_init + A y`.
    pub fn lift(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.apply(y)?;
        x.iter_mut().zip(&self.x_init).for_each(|(v, x0)| *v += x0);
        Ok(x)
    }
}

/// An objective over `R^d̃` that evaluates the base objective at `lift(y)`.
/// Shares the base objective's evaluation counter.
pub struct SubspaceObjective<'p, O> {
    base: O,
    projection: &'p SubspaceProjection,
}

pub fn wrap_objective<O: Objective>(projection: &SubspaceProjection, objective: O) -> Result<SubspaceObjective<'_, O>> {
    if objective.dim() != projection.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: projection.ambient_dim(),
            got: objective.dim(),
        });
    }
    Ok(SubspaceObjective {
        base: objective,
        projection,
    })
}

impl<O> SubspaceObjective<'_, O> {
    pub fn projection(&self) -> &SubspaceProjection {
        self.projection
    }

    pub fn base(&self) -> &O {
        &self.base
    }
}

impl<O: Objective> Objective for SubspaceObjective<'_, O> {
    fn dim(&self) -> usize {
        self.projection.subspace_dim()
    }

    fn counter(&self) -> &EvalCounter {
        self.base.counter()
    }

    fn loss(&self, y: &[f64]) -> Result<f64> {
        self.base.loss(&self.projection.lift(y)?)
    }

    fn evaluate(&self, y: &[f64]) -> Result<f64> {
        let x = self.projection.lift(y)?;
        self.base.evaluate(&x)
    }

    fn analytic_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let g = self.base.analytic_gradient(&self.projection.lift(y)?)?;
        self.projection.apply_transpose(&g)
    }

    fn logit_bundles(&self, y: &[f64]) -> Result<Vec<LogitBundle>> {
        self.base.logit_bundles(&self.projection.lift(y)?)
    }
}

/// Initial ES step size with the same expected update energy as a subspace
/// search with step `sigma_bbt`: `σ_ES = σ_BBT / √3`.
pub fn aligned_initial_step(sigma_bbt: f64) -> Result<f64> {
    if !(sigma_bbt > 0.0) || !sigma_bbt.is_finite() {
        return Err(Error::InvalidInput(format!("sigma_bbt must be positive, got {sigma_bbt}")));
    }
    Ok(sigma_bbt / 3.0_f64.sqrt())
}

/// Monte Carlo estimates behind the step-size alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub d: usize,
    pub d_tilde: usize,
    pub samples: usize,
    pub sigma_bbt: f64,
    pub sigma_es: f64,
    /// Mean of `‖σ_ES u‖²`, `u ~ N(0, I_d)`.
    pub es_energy: f64,
    /// Mean of `‖A σ_BBT z‖²`, `z ~ N(0, I_d̃)`.
    pub bbt_energy: f64,
    pub relative_gap: f64,
    pub entry_mean: f64,
    pub entry_mean_se: f64,
    pub entry_second_moment: f64,
    pub entry_second_moment_se: f64,
    /// `1 / (3 d̃)`.
    pub expected_second_moment: f64,
}

impl AlignmentReport {
    pub fn second_moment_z(&self) -> f64 {
        (self.entry_second_moment - self.expected_second_moment) / self.entry_second_moment_se
    }

    pub fn mean_z(&self) -> f64 {
        self.entry_mean / self.entry_mean_se
    }
}

pub fn alignment_monte_carlo(d: usize, d_tilde: usize, samples: usize, sigma_bbt: f64, seed: u64) -> Result<AlignmentReport> {
    if samples < 2 {
        return Err(Error::InvalidSpec("need at least two Monte Carlo samples".into()));
    }
    let sigma_es = aligned_initial_step(sigma_bbt)?;
    let projection = SubspaceProjection::new(d, d_tilde, seed, &XInitSource::Zero)?;

    let n = projection.entries().len() as f64;
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for &a in projection.entries() {
        let a2 = a * a;
        s1 += a;
        s2 += a2;
        s4 += a2 * a2;
    }
    let entry_mean = s1 / n;
    let entry_mean_se = ((s2 / n - entry_mean * entry_mean) / n).sqrt();
    let entry_second_moment = s2 / n;
    let entry_second_moment_se = ((s4 / n - entry_second_moment.powi(2)) / n).sqrt();

    // ‖A z‖² = zᵀ (AᵀA) z
    let mut gram = vec![0.0; d_tilde * d_tilde];
    for row in projection.entries().chunks_exact(d_tilde) {
        for i in 0..d_tilde {
            let ri = row[i];
            for j in 0..d_tilde {
                gram[i * d_tilde + j] += ri * row[j];
            }
        }
    }

    let mut rng = SeededStream::derive(seed, 13);
    let mut u = vec![0.0; d];
    let mut z = vec![0.0; d_tilde];
    let (mut es_sum, mut bbt_sum) = (0.0, 0.0);
    for _ in 0..samples {
        rng.fill_normal(&mut u);
        es_sum += sigma_es * sigma_es * u.iter().map(|v| v * v).sum::<f64>();
        rng.fill_normal(&mut z);
        let quad: f64 = gram
            .chunks_exact(d_tilde)
            .zip(&z)
            .map(|(row, zi)| zi * row.iter().zip(&z).map(|(g, zj)| g * zj).sum::<f64>())
            .sum();
        bbt_sum += sigma_bbt * sigma_bbt * quad;
    }
    let es_energy = es_sum / samples as f64;
    let bbt_energy = bbt_sum / samples as f64;
    Ok(AlignmentReport {
        d,
        d_tilde,
        samples,
        sigma_bbt,
        sigma_es,
        es_energy,
        bbt_energy,
        relative_gap: (es_energy - bbt_energy).abs() / bbt_energy,
        entry_mean,
        entry_mean_se,
        entry_second_moment,
        entry_second_moment_se,
        expected_second_moment: 1.0 / (3.0 * d_tilde as f64),
    })
}

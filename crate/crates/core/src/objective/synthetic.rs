//! Benchmark functions embedded in a high-dimensional space.
//!
//! `f(x) = g(B (x - x0))` where `B` has `d_true` orthonormal rows. The gradient
//! of `f` always lies in the row space of `B`, so the gradient manifold has a
//! known dimension of at most `d_true`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{EvalCounter, Objective};
use crate::error::{Error, Result};
use crate::rng::SeededStream;

const BASIS_STREAM: u64 = 1;
const SHIFT_STREAM: u64 = 2;
const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerFunction {
    Sphere,
    Rosenbrock,
    Rastrigin,
}

impl InnerFunction {
    /// Value at `z`; every variant has its global minimum 0 at `z = 0`.
    pub fn value(self, z: &[f64]) -> f64 {
        match self {
            Self::Sphere => z.iter().map(|v| v * v).sum(),
            Self::Rosenbrock => z
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0] + 1.0, w[1] + 1.0);
                    100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
                })
                .sum(),
            Self::Rastrigin => z
                .iter()
                .map(|v| v * v - 10.0 * (2.0 * PI * v).cos() + 10.0)
                .sum(),
        }
    }

    pub fn gradient(self, z: &[f64]) -> Vec<f64> {
        match self {
            Self::Sphere => z.iter().map(|v| 2.0 * v).collect(),
            Self::Rosenbrock => {
                let n = z.len();
                let mut g = vec![0.0; n];
                for i in 0..n.saturating_sub(1) {
                    let (a, b) = (z[i] + 1.0, z[i + 1] + 1.0);
                    let t = b - a * a;
                    g[i] += -400.0 * a * t - 2.0 * (1.0 - a);
                    g[i + 1] += 200.0 * t;
                }
                g
            }
            Self::Rastrigin => z
                .iter()
                .map(|v| 2.0 * v + 20.0 * PI * (2.0 * PI * v).sin())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShiftSpec {
    Zero,
    SeededNormal { scale: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self::SeededNormal { scale: 1.0 }
    }
}

/// Serializable description of an embedded benchmark. The embedding and the
/// seeded shift are regenerated from `seed` on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticObjectiveSpec {
    pub ambient_dim: usize,
    pub true_id: usize,
    pub inner_function: InnerFunction,
    #[serde(default)]
    pub shift: ShiftSpec,
    pub seed: u64,
}

impl SyntheticObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim == 0 || self.true_id == 0 || self.true_id > self.ambient_dim {
            return Err(Error::InvalidSpec(format!(
                "need 0 < true_id <= ambient_dim, got true_id={} ambient_dim={}",
                self.true_id, self.ambient_dim
            )));
        }
        match &self.shift {
            ShiftSpec::SeededNormal { scale } if !scale.is_finite() || *scale < 0.0 => {
                Err(Error::InvalidSpec(format!("shift scale must be finite and >= 0, got {scale}")))
            }
            ShiftSpec::Explicit { values } if values.len() != self.ambient_dim => Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: values.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Orthonormalizes the rows of a row-major `rows × cols` matrix in place using
/// classical Gram–Schmidt with one re-orthogonalization pass.
pub fn gram_schmidt_rows(m: &mut [f64], rows: usize, cols: usize) -> Result<()> {
    assert_eq!(m.len(), rows * cols);
    for i in 0..rows {
        let (done, rest) = m.split_at_mut(i * cols);
        let row = &mut rest[..cols];
        let original = norm(row);
        for _pass in 0..2 {
            for j in 0..i {
                let prev = &done[j * cols..(j + 1) * cols];
                let c = dot(prev, row);
                row.iter_mut().zip(prev).for_each(|(r, p)| *r -= c * p);
            }
        }
        let n = norm(row);
        if !(n > 1e-12 * original.max(f64::MIN_POSITIVE)) {
            return Err(Error::InvalidSpec(format!("row {i} is linearly dependent on earlier rows")));
        }
        row.iter_mut().for_each(|r| *r /= n);
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug)]
pub struct SyntheticObjective {
    inner: InnerFunction,
    d: usize,
    k: usize,
    /// Row-major `k × d`.
    basis: Vec<f64>,
    shift: Vec<f64>,
    counter: EvalCounter,
}

impl SyntheticObjective {
    pub fn from_spec(spec: &SyntheticObjectiveSpec) -> Result<Self> {
        spec.validate()?;
        let (d, k) = (spec.ambient_dim, spec.true_id);
        let mut basis = SeededStream::derive(spec.seed, BASIS_STREAM).normal_vec(k * d);
        gram_schmidt_rows(&mut basis, k, d)?;
        let shift = match &spec.shift {
            ShiftSpec::Zero => vec![0.0; d],
            ShiftSpec::SeededNormal { scale } => {
                let mut s = SeededStream::derive(spec.seed, SHIFT_STREAM).normal_vec(d);
                s.iter_mut().for_each(|v| *v *= scale);
                s
            }
            ShiftSpec::Explicit { values } => values.clone(),
        };
        Ok(Self {
            inner: spec.inner_function,
            d,
            k,
            basis,
            shift,
            counter: EvalCounter::new(),
        })
    }

    /// Builds an objective from an explicit embedding; rows must be orthonormal.
    pub fn from_parts(inner: InnerFunction, basis_rows: &[Vec<f64>], shift: Vec<f64>) -> Result<Self> {
        let k = basis_rows.len();
        let d = shift.len();
        if k == 0 || k > d {
            return Err(Error::InvalidSpec(format!("need 0 < rows <= {d}, got {k}")));
        }
        if let Some(r) = basis_rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        for i in 0..k {
            for j in i..k {
                let target = if i == j { 1.0 } else { 0.0 };
                let g = dot(&basis_rows[i], &basis_rows[j]);
                if (g - target).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidSpec(format!(
                        "embedding rows {i},{j} are not orthonormal (inner product {g})"
                    )));
                }
            }
        }
        Ok(Self {
            inner,
            d,
            k,
            basis: basis_rows.concat(),
            shift,
            counter: EvalCounter::new(),
        })
    }

    pub fn true_id(&self) -> usize {
        self.k
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.d..(i + 1) * self.d]
    }

    /// `B (x - x0)`.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = x.iter().zip(&self.shift).map(|(a, b)| a - b).collect();
        self.basis.chunks_exact(self.d).map(|row| dot(row, &diff)).collect()
    }

    /// `Bᵀ v`.
    pub fn lift_from_embedding(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (row, &c) in self.basis.chunks_exact(self.d).zip(v) {
            out.iter_mut().zip(row).for_each(|(o, r)| *o += c * r);
        }
        out
    }
}

impl Objective for SyntheticObjective {
    fn dim(&self) -> usize {
        self.d
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(self.inner.value(&self.embed(x)))
    }

    fn analytic_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let gz = self.inner.gradient(&self.embed(x));
        Ok(self.lift_from_embedding(&gz))
    }
}

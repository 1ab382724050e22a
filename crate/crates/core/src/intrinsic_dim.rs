//! Intrinsic dimension of a gradient set by k-NN maximum likelihood.
//!
//! For each sample `x` with sorted neighbor distances `T_1(x) ≤ … ≤ T_k(x)`
//! (self excluded):
//!
//! ```text
//! d̂ = mean_x [ (1/(k-1)) Σ_{j<k} ln(T_k(x) / T_j(x)) ]^-1
//! ```
//!
//! Gradients are standardized first (per coordinate by default) and compared
//! by the direction between them; see [`DistanceMetric`].

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{gradient, GradientMode, Objective};
use crate::rng::SeededStream;

/// Default sample count `|X|`.
pub const DEFAULT_SAMPLES: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PointSampler {
    SeededNormal { scale: f64 },
    /// Concatenations of `d / embed_dim` tokens drawn uniformly from a seeded
    /// table of `vocab_size` embeddings.
    UniformTokenLike {
        vocab_size: usize,
        embed_dim: usize,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GradientSet {
    pub samples: Vec<GradientSample>,
    /// Points whose gradient was exactly zero.
    pub dropped_zero: usize,
}

impl GradientSet {
    pub fn gradients(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.g.as_slice()).collect()
    }
}

/// Samples `n` distinct points and evaluates the gradient at each.
pub fn collect_gradients(
    objective: &dyn Objective,
    sampler: &PointSampler,
    n: usize,
    mode: GradientMode,
    seed: u64,
) -> Result<GradientSet> {
    if n < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 samples for pairwise distances, got {n}")));
    }
    let d = objective.dim();
    let points = sample_points(sampler, d, n, seed)?;
    let grads: Vec<Vec<f64>> = points
        .par_iter()
        .map(|x| gradient(objective, x, mode))
        .collect::<Result<_>>()?;

    let mut set = GradientSet::default();
    for (x, g) in points.into_iter().zip(grads) {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite gradient entry at index {i}")));
        }
        if g.iter().all(|&v| v == 0.0) {
            set.dropped_zero += 1;
        } else {
            set.samples.push(GradientSample { x, g });
        }
    }
    if set.dropped_zero > 0 {
        log::warn!("dropped {} of {n} samples with zero gradient", set.dropped_zero);
    }
    Ok(set)
}

fn sample_points(sampler: &PointSampler, d: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = SeededStream::derive(seed, 41);
    match *sampler {
        PointSampler::SeededNormal { scale } => Ok((0..n)
            .map(|_| rng.normal_vec(d).into_iter().map(|v| v * scale).collect())
            .collect()),
        PointSampler::UniformTokenLike {
            vocab_size,
            embed_dim,
            scale,
        } => {
            if embed_dim == 0 || !d.is_multiple_of(embed_dim) || vocab_size == 0 {
                return Err(Error::InvalidSpec(format!(
                    "token sampler needs embed_dim dividing d={d} and a nonempty vocabulary"
                )));
            }
            let length = d / embed_dim;
            let distinct = (vocab_size as f64).powi(length.min(64) as i32);
            if distinct < n as f64 {
                return Err(Error::InvalidSpec(format!(
                    "only {distinct} distinct token prompts exist, cannot draw {n}"
                )));
            }
            let table: Vec<Vec<f64>> = (0..vocab_size)
                .map(|_| rng.normal_vec(embed_dim).into_iter().map(|v| v * scale).collect())
                .collect();
            let mut seen = HashSet::new();
            let mut points = Vec::with_capacity(n);
            while points.len() < n {
                let tokens: Vec<usize> = (0..length).map(|_| rng.index(vocab_size)).collect();
                if seen.insert(tokens.clone()) {
                    points.push(tokens.iter().flat_map(|&t| table[t].iter().copied()).collect());
                }
            }
            Ok(points)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Standardize each coordinate across the sample set.
    #[default]
    PerCoordinate,
    /// Standardize each gradient across its own coordinates.
    PerVector,
}

impl Normalization {
    pub fn tag(self) -> &'static str {
        match self {
            Self::PerCoordinate => "per_coordinate",
            Self::PerVector => "per_vector",
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormalizedGradients {
    pub rows: Vec<Vec<f64>>,
    /// Coordinates (per-coordinate mode) or rows (per-vector mode) with zero
    /// variance; they are centered but not rescaled.
    pub zero_variance: Vec<usize>,
    pub normalization: Normalization,
}

/// Zero-mean, unit-variance standardization (population standard deviation).
pub fn normalize_gradients<R: AsRef<[f64]>>(rows: &[R], normalization: Normalization) -> Result<NormalizedGradients> {
    if rows.len() < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 gradients, got {}", rows.len())));
    }
    let dim = rows[0].as_ref().len();
    if let Some(r) = rows.iter().find(|r| r.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: r.as_ref().len(),
        });
    }
    let mut out: Vec<Vec<f64>> = rows.iter().map(|r| r.as_ref().to_vec()).collect();
    let mut zero_variance = Vec::new();
    match normalization {
        Normalization::PerCoordinate => {
            let n = out.len() as f64;
            let mut mean = vec![0.0; dim];
            let mut scale = vec![0.0_f64; dim];
            for r in &out {
                for j in 0..dim {
                    mean[j] += r[j];
                    scale[j] = scale[j].max(r[j].abs());
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; dim];
            for r in &out {
                for j in 0..dim {
                    var[j] += (r[j] - mean[j]).powi(2);
                }
            }
            let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
            let degenerate: Vec<bool> = std
                .iter()
                .zip(&scale)
                .map(|(s, m)| *s <= f64::EPSILON * m || *s == 0.0)
                .collect();
            zero_variance = (0..dim).filter(|&j| degenerate[j]).collect();
            for r in out.iter_mut() {
                for j in 0..dim {
                    r[j] -= mean[j];
                    if degenerate[j] {
                        r[j] = 0.0;
                    } else {
                        r[j] /= std[j];
                    }
                }
            }
        }
        Normalization::PerVector => {
            for (i, r) in out.iter_mut().enumerate() {
                let m = r.iter().sum::<f64>() / dim as f64;
                let s = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / dim as f64).sqrt();
                let flat = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                r.iter_mut().for_each(|v| *v -= m);
                if s <= f64::EPSILON * flat || s == 0.0 {
                    zero_variance.push(i);
                    r.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    r.iter_mut().for_each(|v| *v /= s);
                }
            }
        }
    }
    Ok(NormalizedGradients {
        rows: out,
        zero_variance,
        normalization,
    })
}

/// Pairwise distance between gradients.
///
/// The three direction-based metrics share the same neighbor order. They
/// differ in scale: `Cosine = 1 - cos θ` grows like `θ²`, which halves the
/// log-ratios the estimator sees, while `Chord = ‖u/‖u‖ - v/‖v‖‖` and
/// `Angular = θ` grow like `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Chord,
    Cosine,
    Angular,
    Euclidean,
}

impl DistanceMetric {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Chord => "chord",
            Self::Cosine => "cosine",
            Self::Angular => "angular",
            Self::Euclidean => "euclidean",
        }
    }

    fn directional(self) -> bool {
        !matches!(self, Self::Euclidean)
    }

    /// Maps the Euclidean distance of the working coordinates to this metric.
    fn of_working(self, e: f64) -> f64 {
        match self {
            Self::Chord | Self::Euclidean => e,
            Self::Cosine => 0.5 * e * e,
            Self::Angular => 2.0 * (0.5 * e).min(1.0).asin(),
        }
    }
}

/// Rows re-expressed in an orthonormal basis of their span. Distances and
/// inner products are unchanged; only the working dimension shrinks to the
/// rank of the set.
fn compress_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    const RANK_TOL: f64 = 1e-9;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for row in rows {
        let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut resid = row.clone();
        let mut c = vec![0.0; basis.len()];
        for _pass in 0..2 {
            for (ci, q) in c.iter_mut().zip(&basis) {
                let p: f64 = q.iter().zip(&resid).map(|(a, b)| a * b).sum();
                *ci += p;
                resid.iter_mut().zip(q).for_each(|(r, qv)| *r -= p * qv);
            }
        }
        let rn = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn > RANK_TOL * row_norm {
            resid.iter_mut().for_each(|v| *v /= rn);
            basis.push(resid);
            c.push(rn);
        }
        coords.push(c);
    }
    let r = basis.len();
    for c in coords.iter_mut() {
        c.resize(r, 0.0);
    }
    coords
}

/// Points in working coordinates plus how many input rows were dropped.
struct PreparedPoints {
    coords: Vec<Vec<f64>>,
    dropped_duplicates: usize,
    dropped_degenerate: usize,
}

fn prepare(rows: &[Vec<f64>], metric: DistanceMetric) -> PreparedPoints {
    let mut dropped_degenerate = 0;
    let mut working: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        if metric.directional() {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                dropped_degenerate += 1;
                continue;
            }
            working.push(r.iter().map(|v| v / n).collect());
        } else {
            working.push(r.clone());
        }
    }
    let mut seen = HashSet::new();
    let before = working.len();
    working.retain(|r| seen.insert(r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()));
    let dropped_duplicates = before - working.len();
    if dropped_duplicates > 0 {
        log::warn!("dropped {dropped_duplicates} duplicate gradient rows");
    }
    PreparedPoints {
        coords: compress_rows(&working),
        dropped_duplicates,
        dropped_degenerate,
    }
}

/// For every point, the `k_max` smallest distances to other points in
/// ascending order; ties are broken by sample index.
fn neighbor_table(coords: &[Vec<f64>], k_max: usize, metric: DistanceMetric) -> Vec<Vec<f64>> {
    coords
        .par_iter()
        .enumerate()
        .map(|(i, ci)| {
            let mut dists: Vec<(f64, usize)> = coords
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, cj)| {
                    let e = ci.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    (metric.of_working(e), j)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if dists.len() > k_max {
                dists.select_nth_unstable_by(k_max - 1, cmp);
                dists.truncate(k_max);
            }
            dists.sort_by(cmp);
            dists.into_iter().map(|(d, _)| d).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleEstimate {
    pub d_hat: f64,
    pub k: usize,
    /// Points that contributed to the average.
    pub n_used: usize,
    pub dropped_duplicates: usize,
    /// Zero rows (directional metrics) and points whose neighbor distances
    /// were all equal or zero.
    pub dropped_degenerate: usize,
}

fn mle_from_table(table: &[Vec<f64>], k: usize) -> (f64, usize, usize) {
    let mut total = 0.0;
    let mut used = 0;
    let mut degenerate = 0;
    for t in table {
        let tk = t[k - 1];
        let s: f64 = t[..k - 1].iter().map(|tj| (tk / tj).ln()).sum::<f64>() / (k - 1) as f64;
        if s.is_finite() && s > 0.0 {
            total += 1.0 / s;
            used += 1;
        } else {
            degenerate += 1;
        }
    }
    (total / used as f64, used, degenerate)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 || k >= n {
        return Err(Error::InvalidSpec(format!("k must satisfy 2 <= k < |G| = {n}, got {k}")));
    }
    Ok(())
}

/// Ascending distances from each retained row to its `k` nearest others.
pub fn nearest_distances(rows: &[Vec<f64>], k: usize, metric: DistanceMetric) -> Result<Vec<Vec<f64>>> {
    let prepared = prepare(rows, metric);
    check_k(k, prepared.coords.len())?;
    Ok(neighbor_table(&prepared.coords, k, metric))
}

/// Maximum-likelihood intrinsic dimension of the rows for neighborhood size `k`.
pub fn mle_intrinsic_dimension(rows: &[Vec<f64>], k: usize, metric: DistanceMetric) -> Result<MleEstimate> {
    check_k(k, rows.len())?;
    Ok(mle_multi(rows, &[k], metric)?.remove(0))
}

/// Estimates for several `k` sharing one neighbor search.
pub fn mle_multi(rows: &[Vec<f64>], ks: &[usize], metric: DistanceMetric) -> Result<Vec<MleEstimate>> {
    let prepared = prepare(rows, metric);
    let n = prepared.coords.len();
    for &k in ks {
        check_k(k, n)?;
    }
    let k_max = ks.iter().copied().max().unwrap_or(2);
    let table = neighbor_table(&prepared.coords, k_max, metric);
    ks.iter()
        .map(|&k| {
            let (d_hat, n_used, degenerate) = mle_from_table(&table, k);
            if n_used == 0 {
                return Err(Error::InvalidInput("every point has degenerate neighbor distances".into()));
            }
            Ok(MleEstimate {
                d_hat,
                k,
                n_used,
                dropped_duplicates: prepared.dropped_duplicates,
                dropped_degenerate: prepared.dropped_degenerate + degenerate,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdEstimateConfig {
    pub n_samples: usize,
    pub sampler: PointSampler,
    pub gradient_mode: GradientMode,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub seed: u64,
}

/// Estimates for one prompt length across all requested `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdEstimateReport {
    pub prompt_length: usize,
    pub ambient_dim: usize,
    pub n_samples: usize,
    pub estimates: BTreeMap<usize, f64>,
    pub errors: BTreeMap<usize, String>,
    pub dropped_duplicates: usize,
    pub dropped_zero_gradients: usize,
    pub zero_variance_coords: usize,
    pub metric: DistanceMetric,
    pub normalization: Normalization,
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdSweepRow {
    pub l: usize,
    pub k: usize,
    pub n_samples: usize,
    pub d_hat: Option<f64>,
    pub dropped_duplicates: usize,
    pub zero_variance_coords: usize,
}

impl IdEstimateReport {
    pub fn rows(&self, ks: &[usize]) -> Vec<IdSweepRow> {
        ks.iter()
            .map(|&k| IdSweepRow {
                l: self.prompt_length,
                k,
                n_samples: self.n_samples,
                d_hat: self.estimates.get(&k).copied(),
                dropped_duplicates: self.dropped_duplicates,
                zero_variance_coords: self.zero_variance_coords,
            })
            .collect()
    }
}

/// Runs the estimator for one objective across all `ks`. Bad `k` values are
/// recorded per cell rather than failing the whole report.
pub fn estimate_for_objective(
    objective: &dyn Objective,
    prompt_length: usize,
    ks: &[usize],
    config: &IdEstimateConfig,
) -> Result<IdEstimateReport> {
    let set = collect_gradients(objective, &config.sampler, config.n_samples, config.gradient_mode, config.seed)?;
    let mut report = IdEstimateReport {
        prompt_length,
        ambient_dim: objective.dim(),
        n_samples: set.samples.len(),
        estimates: BTreeMap::new(),
        errors: BTreeMap::new(),
        dropped_duplicates: 0,
        dropped_zero_gradients: set.dropped_zero,
        zero_variance_coords: 0,
        metric: config.metric,
        normalization: config.normalization,
    };
    if set.samples.len() < 2 {
        let msg = format!("only {} nonzero gradients", set.samples.len());
        for &k in ks {
            report.errors.insert(k, msg.clone());
        }
        return Ok(report);
    }
    let grads = set.gradients();
    let normalized = normalize_gradients(&grads, config.normalization)?;
    report.zero_variance_coords = normalized.zero_variance.len();
    drop(set);

    let prepared_n = normalized.rows.len();
    let valid: Vec<usize> = ks.iter().copied().filter(|&k| check_k(k, prepared_n).is_ok()).collect();
    for &k in ks.iter().filter(|k| !valid.contains(k)) {
        report.errors.insert(k, check_k(k, prepared_n).unwrap_err().to_string());
    }
    if !valid.is_empty() {
        match mle_multi(&normalized.rows, &valid, config.metric) {
            Ok(estimates) => {
                for e in estimates {
                    report.dropped_duplicates = e.dropped_duplicates;
                    report.estimates.insert(e.k, e.d_hat);
                }
            }
            Err(err) => {
                for &k in &valid {
                    report.errors.insert(k, err.to_string());
                }
            }
        }
    }
    Ok(report)
}

/// Cross product of prompt lengths and neighborhood sizes. `build` maps a
/// prompt length to its objective; a failing cell is recorded and the sweep
/// moves on.
pub fn id_sweep<F>(build: F, lengths: &[usize], ks: &[usize], config: &IdEstimateConfig) -> Vec<IdEstimateReport>
where
    F: Fn(usize) -> Result<Box<dyn Objective>>,
{
    lengths
        .iter()
        .map(|&l| {
            let result = build(l).and_then(|obj| estimate_for_objective(obj.as_ref(), l, ks, config));
            result.unwrap_or_else(|err| IdEstimateReport {
                prompt_length: l,
                ambient_dim: 0,
                n_samples: 0,
                estimates: BTreeMap::new(),
                errors: ks.iter().map(|&k| (k, err.to_string())).collect(),
                dropped_duplicates: 0,
                dropped_zero_gradients: 0,
                zero_variance_coords: 0,
                metric: config.metric,
                normalization: config.normalization,
            })
        })
        .collect()
}

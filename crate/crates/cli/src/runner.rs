//! Seeded runs, trajectory files and the median/IQR summary.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use esid::analysis::{confidence_diagnostics, ConfidenceDiagnostics};
use esid::objective::{LogitLandscape, Objective, SyntheticObjective};
use esid::optim::{run_optimizer, RunMetadata, RunResult, Termination, TrajectoryPoint};
use esid::projection::{wrap_objective, SubspaceProjection};
use esid::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ObjectiveConfig};
use crate::remote::RemoteObjective;

/// Budgets above this are logged at every 10th evaluation.
pub const DENSE_LOG_LIMIT: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub eval_index: u64,
    pub best_loss: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

pub fn checkpoint_stride(max_evals: u64) -> u64 {
    if max_evals <= DENSE_LOG_LIMIT {
        1
    } else {
        10
    }
}

/// Keeps every `stride`-th evaluation plus the final one.
pub fn thin_trajectory(points: &[TrajectoryPoint], stride: u64, wall_ms: bool) -> Vec<TrajectoryRecord> {
    let last = points.last().map(|p| p.eval_index);
    points
        .iter()
        .filter(|p| p.eval_index % stride == 0 || Some(p.eval_index) == last)
        .map(|p| TrajectoryRecord {
            eval_index: p.eval_index,
            best_loss: p.best_loss,
            sigma: p.sigma,
            wall_ms: wall_ms.then_some(p.wall_ms),
        })
        .collect()
}

pub fn build_objective(config: &ObjectiveConfig) -> Result<Box<dyn Objective>> {
    Ok(match config {
        ObjectiveConfig::Synthetic(spec) => Box::new(SyntheticObjective::from_spec(spec)?),
        ObjectiveConfig::LogitLandscape(spec) => Box::new(LogitLandscape::new(spec.clone())?),
        ObjectiveConfig::Remote(spec) => Box::new(RemoteObjective::connect(spec.clone())?),
        ObjectiveConfig::QuadraticFamily(_) => {
            return Err(Error::InvalidSpec("quadratic_family is only valid for subspace-study".into()))
        }
    })
}

/// Final state of one seed, written next to its trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub best_loss: f64,
    pub evals: u64,
    pub final_sigma: f64,
    pub termination: Termination,
    pub metadata: RunMetadata,
    /// Best point in the ambient space.
    pub best_x: Vec<f64>,
    /// Best point in subspace coordinates when a projection was used.
    pub best_y: Option<Vec<f64>>,
    pub confidence: Option<ConfidenceDiagnostics>,
}

pub struct SeedRun {
    pub result: RunResult,
    pub report: SeedReport,
}

pub fn run_seed(config: &ExperimentConfig, objective: &dyn Objective, seed: u64) -> Result<SeedRun> {
    let mut opt = config
        .optimizer
        .clone()
        .ok_or_else(|| Error::InvalidSpec("missing [optimizer] block".into()))?;
    opt.seed = seed;
    let budget = config
        .budget
        .ok_or_else(|| Error::InvalidSpec("missing [budget] block".into()))?;
    let (result, best_x, best_y) = match &config.projection {
        Some(p) => {
            let projection = SubspaceProjection::from_config(p, seed)?;
            let wrapped = wrap_objective(&projection, objective)?;
            let r = run_optimizer(&opt, &wrapped, &budget)?;
            let x = projection.lift(&r.best_x)?;
            let y = r.best_x.clone();
            (r, x, Some(y))
        }
        None => {
            let r = run_optimizer(&opt, objective, &budget)?;
            let x = r.best_x.clone();
            (r, x, None)
        }
    };
    let confidence = match objective.logit_bundles(&best_x) {
        Ok(b) => Some(confidence_diagnostics(&b)?),
        Err(Error::UnsupportedMode(_)) => None,
        Err(e) => return Err(e),
    };
    let report = SeedReport {
        seed,
        best_loss: result.best_loss,
        evals: result.evals,
        final_sigma: result.final_sigma,
        termination: result.termination,
        metadata: result.metadata.clone(),
        best_x,
        best_y,
        confidence,
    };
    Ok(SeedRun { result, report })
}

pub fn trajectory_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trajectory_seed{seed}.jsonl"))
}

pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_trajectory(path: &Path) -> anyhow::Result<Vec<TrajectoryRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub eval_index: u64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub n_seeds: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per checkpoint, the median and quartiles of each seed's best loss so far.
/// A checkpoint appears once every seed has a record at or before it; seeds
/// that stopped early carry their last value forward.
pub fn summarize(trajectories: &[Vec<TrajectoryRecord>]) -> Vec<SummaryRow> {
    if trajectories.is_empty() || trajectories.iter().any(|t| t.is_empty()) {
        return Vec::new();
    }
    let start = trajectories.iter().map(|t| t[0].eval_index).max().unwrap_or(0);
    let mut checkpoints: Vec<u64> = trajectories
        .iter()
        .flat_map(|t| t.iter().map(|r| r.eval_index))
        .filter(|&e| e >= start)
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut cursors = vec![0usize; trajectories.len()];
    checkpoints
        .into_iter()
        .map(|c| {
            let mut values: Vec<f64> = trajectories
                .iter()
                .zip(cursors.iter_mut())
                .map(|(t, cur)| {
                    while *cur + 1 < t.len() && t[*cur + 1].eval_index <= c {
                        *cur += 1;
                    }
                    t[*cur].best_loss
                })
                .collect();
            values.sort_by(f64::total_cmp);
            SummaryRow {
                eval_index: c,
                median: quantile(&values, 0.5),
                q25: quantile(&values, 0.25),
                q75: quantile(&values, 0.75),
                n_seeds: values.len(),
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every `trajectory_seed*.jsonl` in `dir`, ordered by seed.
pub fn read_run_dir(dir: &Path) -> anyhow::Result<Vec<(u64, Vec<TrajectoryRecord>)>> {
    let mut runs = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(seed) = name.strip_prefix("trajectory_seed").and_then(|s| s.strip_suffix(".jsonl")) {
            if let Ok(seed) = seed.parse::<u64>() {
                runs.push((seed, read_trajectory(&path)?));
            }
        }
    }
    runs.sort_by_key(|(s, _)| *s);
    Ok(runs)
}

/// Runs all seeds and writes trajectories, per-seed reports, `summary.csv`
/// and a copy of the resolved config under the output directory.
pub fn optimize(config: &ExperimentConfig) -> anyhow::Result<Vec<SeedReport>> {
    let out = &config.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let objective = build_objective(&config.objective)?;
    let budget = config.budget.as_ref().map_or(0, |b| b.max_evals);
    let stride = checkpoint_stride(budget);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    let runs: Vec<Result<SeedRun>> =
        pool.install(|| config.seeds.par_iter().map(|&s| run_seed(config, objective.as_ref(), s)).collect());

    let mut reports = Vec::new();
    let mut trajectories = Vec::new();
    for (seed, run) in config.seeds.iter().zip(runs) {
        let run = run?;
        let records = thin_trajectory(&run.result.trajectory, stride, config.record_wall_ms);
        write_trajectory(&trajectory_path(out, *seed), &records)?;
        let report_path = out.join(format!("result_seed{seed}.json"));
        fs::write(&report_path, serde_json::to_string_pretty(&run.report)?)?;
        log::info!("seed {seed}: best loss {:.6e} after {} evaluations", run.report.best_loss, run.report.evals);
        trajectories.push(records);
        reports.push(run.report);
    }
    write_summary(&out.join("summary.csv"), &summarize(&trajectories))?;
    fs::write(out.join("config.resolved.toml"), toml::to_string(config)?)?;
    Ok(reports)
}

//! `estimate-id`, `subspace-study` and `align-check`.

use std::fs;
use std::path::Path;

use anyhow::Context;
use esid::analysis::{quadratic_family, run_subspace_study, StudyBudgets, SubspaceStudyResult};
use esid::intrinsic_dim::{id_sweep, IdEstimateConfig, IdEstimateReport};
use esid::objective::{LogitLandscape, Objective, SyntheticObjective};
use esid::optim::BudgetSpec;
use esid::projection::{alignment_monte_carlo, AlignmentReport, SubspaceProjection};
use esid::{Error, Result};
use serde::Serialize;

use crate::config::{ExperimentConfig, ObjectiveConfig};
use crate::runner::build_objective;

pub const STUDY_CSV_HEADER: &str = "task,f_ps,f_bbt,gamma_op,gamma_pi,seed";

/// Objective for prompt length `l`, with ambient dimension `l · embed_dim`.
fn objective_for_length(objective: &ObjectiveConfig, ambient_dim: usize) -> Result<Box<dyn Objective>> {
    match objective {
        ObjectiveConfig::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.ambient_dim = ambient_dim;
            Ok(Box::new(SyntheticObjective::from_spec(&spec)?))
        }
        ObjectiveConfig::LogitLandscape(spec) => {
            let mut spec = spec.clone();
            spec.ambient_dim = ambient_dim;
            Ok(Box::new(LogitLandscape::new(spec)?))
        }
        other => {
            let obj = build_objective(other)?;
            if obj.dim() != ambient_dim {
                return Err(Error::DimensionMismatch {
                    expected: ambient_dim,
                    got: obj.dim(),
                });
            }
            Ok(obj)
        }
    }
}

#[derive(Debug, Serialize)]
struct IdCsvRow {
    l: usize,
    k: usize,
    n_samples: usize,
    d_hat: Option<f64>,
    dropped_duplicates: usize,
    zero_variance_coords: usize,
    error: Option<String>,
}

/// Runs the sweep and writes `id_estimates.csv` (one row per length and k)
/// plus the full reports as JSON.
pub fn estimate_id(config: &ExperimentConfig) -> anyhow::Result<Vec<IdEstimateReport>> {
    let id = config.id.as_ref().context("missing [id] block")?;
    let est = IdEstimateConfig {
        n_samples: id.n_samples,
        sampler: id.sampler.clone(),
        gradient_mode: id.gradient_mode,
        normalization: id.normalization,
        metric: id.metric,
        seed: id.seed,
    };
    let reports = id_sweep(
        |l| objective_for_length(&config.objective, l * id.embed_dim),
        &id.lengths,
        &id.ks,
        &est,
    );
    fs::create_dir_all(&config.output_dir)?;
    let mut w = csv::Writer::from_path(config.output_dir.join("id_estimates.csv"))?;
    for report in &reports {
        for row in report.rows(&id.ks) {
            w.serialize(IdCsvRow {
                l: row.l,
                k: row.k,
                n_samples: row.n_samples,
                d_hat: row.d_hat,
                dropped_duplicates: row.dropped_duplicates,
                zero_variance_coords: row.zero_variance_coords,
                error: report.errors.get(&row.k).cloned(),
            })?;
        }
    }
    w.flush()?;
    fs::write(config.output_dir.join("id_reports.json"), serde_json::to_string_pretty(&reports)?)?;
    Ok(reports)
}

#[derive(Debug, Serialize)]
pub struct StudyRecord {
    pub task: String,
    #[serde(flatten)]
    pub result: SubspaceStudyResult,
}

/// Runs the study once per seed and writes `study.csv` and `study.jsonl`.
pub fn subspace_study(config: &ExperimentConfig) -> anyhow::Result<Vec<StudyRecord>> {
    let study = config.study.as_ref().context("missing [study] block")?;
    let budgets = StudyBudgets {
        full: BudgetSpec::evals(study.full_budget),
        subspace: BudgetSpec::evals(study.subspace_budget),
        sigma_full: study.sigma_full,
        sigma_subspace: study.sigma_subspace,
    };
    let mut records = Vec::new();
    for &seed in &config.seeds {
        let result = match &config.objective {
            ObjectiveConfig::QuadraticFamily(spec) => {
                let (objective, projection) = quadratic_family(spec, seed)?;
                run_subspace_study(&objective, &projection, &budgets, seed)?
            }
            other => {
                let objective = build_objective(other)?;
                let p = config.projection.as_ref().context("missing [projection] block")?;
                let projection = SubspaceProjection::from_config(p, seed)?;
                run_subspace_study(objective.as_ref(), &projection, &budgets, seed)?
            }
        };
        log::info!("seed {seed}: gamma_pi {:.4}", result.gamma_pi);
        records.push(StudyRecord {
            task: study.task.clone(),
            result,
        });
    }
    write_study(&config.output_dir, &records)?;
    Ok(records)
}

fn write_study(dir: &Path, records: &[StudyRecord]) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from(STUDY_CSV_HEADER);
    csv.push('\n');
    let mut jsonl = String::new();
    for r in records {
        let s = &r.result;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.task, s.f_ps, s.f_bbt, s.gamma_op, s.gamma_pi, s.seed
        ));
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(dir.join("study.csv"), csv)?;
    fs::write(dir.join("study.jsonl"), jsonl)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct AlignCheck {
    #[serde(flatten)]
    pub report: AlignmentReport,
    pub energy_ok: bool,
    pub second_moment_ok: bool,
}

/// Energy gap below 2% and `Ê[A²]` within three standard errors of `1/(3d̃)`.
pub fn align_check(d: usize, d_tilde: usize, samples: usize, sigma_bbt: f64, seed: u64) -> Result<AlignCheck> {
    let report = alignment_monte_carlo(d, d_tilde, samples, sigma_bbt, seed)?;
    Ok(AlignCheck {
        energy_ok: report.relative_gap < 0.02,
        second_moment_ok: report.second_moment_z().abs() < 3.0,
        report,
    })
}

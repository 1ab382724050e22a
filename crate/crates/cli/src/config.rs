//! Experiment configuration. TOML is the primary format; JSON is accepted
//! for files ending in `.json`.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use esid::analysis::QuadraticFamilySpec;
use esid::intrinsic_dim::{DistanceMetric, Normalization, PointSampler};
use esid::objective::{GradientMode, LogitLandscapeSpec, SyntheticObjectiveSpec};
use esid::optim::{BudgetSpec, OptimizerConfig};
use esid::projection::ProjectionConfig;
use serde::{Deserialize, Serialize};

use crate::remote::RemoteSpec;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 42, 43, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObjectiveConfig {
    Synthetic(SyntheticObjectiveSpec),
    LogitLandscape(LogitLandscapeSpec),
    Remote(RemoteSpec),
    /// Only meaningful for `subspace-study`; carries its own projection.
    QuadraticFamily(QuadraticFamilySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdConfig {
    /// Each prompt length `l` gives an ambient dimension `l · embed_dim`,
    /// replacing the objective's own `ambient_dim`.
    pub embed_dim: usize,
    pub lengths: Vec<usize>,
    pub ks: Vec<usize>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    pub sampler: PointSampler,
    #[serde(default = "default_gradient_mode")]
    pub gradient_mode: GradientMode,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    esid::intrinsic_dim::DEFAULT_SAMPLES
}

fn default_gradient_mode() -> GradientMode {
    GradientMode::Analytic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub task: String,
    pub full_budget: u64,
    pub subspace_budget: u64,
    #[serde(default = "default_study_sigma")]
    pub sigma_full: f64,
    #[serde(default = "default_study_sigma")]
    pub sigma_subspace: f64,
}

fn default_study_sigma() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    #[serde(default)]
    pub id: Option<IdConfig>,
    #[serde(default)]
    pub study: Option<StudyConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seeds running at once; 0 means one per core.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// When false, trajectory records omit `wall_ms` and replays are
    /// byte-identical.
    #[serde(default = "default_true")]
    pub record_wall_ms: bool,
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn default_workers() -> usize {
    1
}
fn default_true() -> bool {
    true
}

/// A config problem, anchored to a line of the source file when possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Line (1-based) containing byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line that assigns or opens `key`, else line 1.
fn line_of_key(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let t = l.trim_start().trim_start_matches('"');
            t.starts_with(key) && t[key.len()..].trim_start().trim_start_matches('"').trim_start().starts_with(['=', ':'])
                || l.trim() == format!("[{key}]")
        })
        .map_or(1, |i| i + 1)
}

/// Which blocks a subcommand needs beyond the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Optimize,
    EstimateId,
    SubspaceStudy,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(text).map_err(|e| ConfigError {
                path: path.to_path_buf(),
                line: e.line().max(1),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(text).map_err(|e| ConfigError {
                path: path.to_path_buf(),
                line: e.span().map_or(1, |s| line_of(text, s.start)),
                message: e.message().to_string(),
            })?
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: 1,
            message: format!("cannot read config: {e}"),
        })?;
        let cfg = Self::parse(&text, path)?;
        Ok(cfg)
    }

    /// Loads and validates for `command`.
    pub fn load_for(path: &Path, command: Command) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: 1,
            message: format!("cannot read config: {e}"),
        })?;
        let cfg = Self::parse(&text, path)?;
        cfg.validate(command).map_err(|(key, message)| ConfigError {
            path: path.to_path_buf(),
            line: line_of_key(&text, key),
            message,
        })?;
        Ok(cfg)
    }

    /// On failure returns the offending key and a message.
    pub fn validate(&self, command: Command) -> Result<(), (&'static str, String)> {
        if self.seeds.is_empty() {
            return Err(("seeds", "seeds must not be empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(("seeds", format!("seed {s} appears more than once")));
        }
        // estimate-id replaces ambient_dim per prompt length; check the smallest
        let ambient = match (command, &self.id) {
            (Command::EstimateId, Some(id)) => id.lengths.iter().min().map(|l| l * id.embed_dim),
            _ => None,
        };
        match &self.objective {
            ObjectiveConfig::Synthetic(s) => {
                let mut s = s.clone();
                s.ambient_dim = ambient.unwrap_or(s.ambient_dim);
                s.validate().map_err(|e| ("objective", e.to_string()))?
            }
            ObjectiveConfig::LogitLandscape(s) => {
                let mut s = s.clone();
                s.ambient_dim = ambient.unwrap_or(s.ambient_dim);
                s.validate().map_err(|e| ("objective", e.to_string()))?
            }
            ObjectiveConfig::Remote(r) if r.endpoint.is_empty() => {
                return Err(("endpoint", "remote endpoint must not be empty".into()));
            }
            _ => {}
        }
        let family = matches!(self.objective, ObjectiveConfig::QuadraticFamily(_));
        match command {
            Command::Optimize => {
                if family {
                    return Err(("objective", "quadratic_family is only valid for subspace-study".into()));
                }
                let opt = self.optimizer.as_ref().ok_or(("optimizer", "missing [optimizer] block".to_string()))?;
                opt.validate().map_err(|e| ("optimizer", e.to_string()))?;
                let budget = self.budget.as_ref().ok_or(("budget", "missing [budget] block".to_string()))?;
                if budget.max_evals == 0 {
                    return Err(("max_evals", "max_evals must be positive".into()));
                }
            }
            Command::EstimateId => {
                let id = self.id.as_ref().ok_or(("id", "missing [id] block".to_string()))?;
                if id.lengths.is_empty() || id.ks.is_empty() {
                    return Err(("id", "lengths and ks must be nonempty".into()));
                }
                if id.embed_dim == 0 || id.lengths.contains(&0) {
                    return Err(("id", "embed_dim and every length must be positive".into()));
                }
                if id.n_samples < 2 {
                    return Err(("n_samples", "n_samples must be at least 2".into()));
                }
                if family {
                    return Err(("objective", "quadratic_family is only valid for subspace-study".into()));
                }
            }
            Command::SubspaceStudy => {
                let study = self.study.as_ref().ok_or(("study", "missing [study] block".to_string()))?;
                if study.full_budget == 0 || study.subspace_budget == 0 {
                    return Err(("study", "both study budgets must be positive".into()));
                }
                if !family && self.projection.is_none() {
                    return Err(("projection", "subspace-study needs a [projection] block".into()));
                }
            }
        }
        Ok(())
    }
}

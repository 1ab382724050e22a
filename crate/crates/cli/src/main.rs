use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use esid_cli::config::{Command, ExperimentConfig};
use esid_cli::{exit_code, runner, study};

#[derive(Parser)]
#[command(name = "esid", version, about = "Projection-free evolution strategies for prompt search")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured optimizer once per seed.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sweep the intrinsic-dimension estimator over prompt lengths and k.
    EstimateId {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare full-space and subspace CMA-ES on the same objective.
    SubspaceStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo check that σ_ES = σ_BBT/√3 matches update energies.
    AlignCheck {
        #[arg(long, default_value_t = 1000)]
        d: usize,
        #[arg(long, default_value_t = 100)]
        d_tilde: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma_bbt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute `summary.csv` for existing run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn load(path: &Path, command: Command, output: Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load_for(path, command)?;
    if let Some(out) = output {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Cmd::Optimize { config, output } => {
            let cfg = load(&config, Command::Optimize, output)?;
            for r in runner::optimize(&cfg)? {
                println!("seed {}: best_loss {:.6e} evals {}", r.seed, r.best_loss, r.evals);
            }
        }
        Cmd::EstimateId { config, output } => {
            let cfg = load(&config, Command::EstimateId, output)?;
            for r in study::estimate_id(&cfg)? {
                for (k, d) in &r.estimates {
                    println!("l={} k={k} d_hat={d:.3}", r.prompt_length);
                }
                for (k, e) in &r.errors {
                    println!("l={} k={k} error: {e}", r.prompt_length);
                }
            }
        }
        Cmd::SubspaceStudy { config, output } => {
            let cfg = load(&config, Command::SubspaceStudy, output)?;
            println!("{}", study::STUDY_CSV_HEADER);
            for r in study::subspace_study(&cfg)? {
                let s = &r.result;
                println!("{},{},{},{},{},{}", r.task, s.f_ps, s.f_bbt, s.gamma_op, s.gamma_pi, s.seed);
            }
        }
        Cmd::AlignCheck {
            d,
            d_tilde,
            samples,
            sigma_bbt,
            seed,
        } => {
            let check = study::align_check(d, d_tilde, samples, sigma_bbt, seed)?;
            println!("{}", serde_json::to_string_pretty(&check)?);
        }
        Cmd::Report { run_dirs } => {
            for dir in run_dirs {
                let runs = runner::read_run_dir(&dir)?;
                anyhow::ensure!(!runs.is_empty(), "no trajectory files in {}", dir.display());
                let trajectories: Vec<_> = runs.into_iter().map(|(_, t)| t).collect();
                let rows = runner::summarize(&trajectories);
                runner::write_summary(&dir.join("summary.csv"), &rows)
                    .with_context(|| format!("writing summary for {}", dir.display()))?;
                if let Some(last) = rows.last() {
                    println!(
                        "{}: {} seeds, final median {:.6e} (IQR {:.6e} to {:.6e}) at {} evals",
                        dir.display(),
                        last.n_seeds,
                        last.median,
                        last.q25,
                        last.q75,
                        last.eval_index
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}

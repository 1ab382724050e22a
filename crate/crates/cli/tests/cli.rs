mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{Behavior, MockServer};

fn esid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esid")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn sphere_config(out: &Path, extra: &str) -> String {
    format!(
        r#"output_dir = "{}"
{extra}
[objective]
kind = "synthetic"
ambient_dim = 60
true_id = 6
inner_function = "sphere"
seed = 4

[optimizer]
algorithm = "one_plus_one"
damping = "id_aware"
d_tilde = 12

[budget]
max_evals = 400
"#,
        out.display()
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn last_losses(dir: &Path) -> Vec<f64> {
    let mut out = Vec::new();
    for seed in [0, 1, 42, 43, 100] {
        let text = fs::read_to_string(dir.join(format!("trajectory_seed{seed}.jsonl"))).unwrap();
        let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert!(last["eval_index"].as_u64().unwrap() <= 400);
        out.push(last["best_loss"].as_f64().unwrap());
    }
    out
}

#[test]
fn optimize_writes_one_trajectory_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "sphere.toml", &sphere_config(&out, ""));
    let before = fs::read(&cfg).unwrap();
    let o = esid(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&cfg).unwrap(), before);

    let trajectories = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("trajectory_seed"))
        .count();
    assert_eq!(trajectories, 5);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let last = summary.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    assert_eq!(fields[0], "400");
    let reported: f64 = fields[1].parse().unwrap();
    let expected = median(last_losses(&out));
    assert!((reported - expected).abs() <= 1e-12 * expected.abs(), "{reported} vs {expected}");
}

#[test]
fn replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let cfg_a = write(tmp.path(), "a.toml", &sphere_config(&a, "record_wall_ms = false"));
    let cfg_b = write(tmp.path(), "b.toml", &sphere_config(&b, "record_wall_ms = false"));
    assert!(esid(&["optimize", "--config", cfg_a.to_str().unwrap()]).status.success());
    assert!(esid(&["optimize", "--config", cfg_b.to_str().unwrap()]).status.success());
    for seed in [0, 1, 42, 43, 100] {
        let name = format!("trajectory_seed{seed}.jsonl");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn malformed_toml_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "output_dir = \"x\"\nseeds = [1, 2\n[objective]\n");
    let o = esid(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:"), "{err}");
}

#[test]
fn duplicate_seeds_point_at_their_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "dup.toml", &sphere_config(&out, "seeds = [3, 3]"));
    let o = esid(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dup.toml:2:"), "{err}");
    assert!(!out.exists());
}

#[test]
fn json_config_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let toml_text = sphere_config(&out, "seeds = [5]");
    let value: toml::Value = toml::from_str(&toml_text).unwrap();
    let cfg = write(tmp.path(), "sphere.json", &serde_json::to_string(&value).unwrap());
    let o = esid(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("trajectory_seed5.jsonl").exists());
}

#[test]
fn estimate_id_without_objective_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "id.toml",
        "output_dir = \"x\"\n[id]\nembed_dim = 2\nlengths = [1]\nks = [3]\nsampler = { kind = \"seeded_normal\", scale = 1.0 }\n",
    );
    assert_eq!(esid(&["estimate-id", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn estimate_id_grid_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("id");
    let cfg = write(
        tmp.path(),
        "id.toml",
        &format!(
            r#"output_dir = "{}"
[objective]
kind = "synthetic"
ambient_dim = 1
true_id = 3
inner_function = "sphere"
seed = 1

[id]
embed_dim = 4
lengths = [1, 2, 3]
ks = [5, 8]
n_samples = 300
sampler = {{ kind = "seeded_normal", scale = 1.0 }}
"#,
            out.display()
        ),
    );
    let o = esid(&["estimate-id", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("id_estimates.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "l,k,n_samples,d_hat,dropped_duplicates,zero_variance_coords,error");
    assert_eq!(lines.len(), 7);
}

fn study_config(out: &Path, placement: &str) -> String {
    format!(
        r#"output_dir = "{}"
seeds = [7]
[objective]
kind = "quadratic_family"
d = 200
d_tilde = 20
placement = "{placement}"
x_init_source = {{ kind = "seeded_normal", scale = 0.5 }}

[study]
task = "{placement}"
full_budget = 10000
subspace_budget = 3000
sigma_full = 0.1
"#,
        out.display()
    )
}

fn study_gamma_pi(tmp: &Path, placement: &str) -> f64 {
    let out = tmp.join(placement);
    let cfg = write(tmp, &format!("{placement}.toml"), &study_config(&out, placement));
    let o = esid(&["subspace-study", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("study.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "task,f_ps,f_bbt,gamma_op,gamma_pi,seed");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], placement);
    assert_eq!(row[5], "7");
    row[4].parse().unwrap()
}

#[test]
fn subspace_study_rows() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(study_gamma_pi(tmp.path(), "in_span") < 0.1);
    assert!(study_gamma_pi(tmp.path(), "off_span") > 1.0);
}

#[test]
fn report_recomputes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "sphere.toml", &sphere_config(&out, ""));
    assert!(esid(&["optimize", "--config", cfg.to_str().unwrap()]).status.success());
    let original = fs::read_to_string(out.join("summary.csv")).unwrap();
    fs::remove_file(out.join("summary.csv")).unwrap();
    let o = esid(&["report", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), original);
}

#[test]
fn align_check_passes_defaults() {
    let o = esid(&["align-check", "--samples", "20000"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["energy_ok"], true);
    assert_eq!(v["second_moment_ok"], true);
}

fn remote_config(out: &Path, endpoint: &str) -> String {
    format!(
        r#"output_dir = "{}"
seeds = [0, 1]
[objective]
kind = "remote"
endpoint = "{endpoint}"
retries = 1
backoff_ms = 1

[optimizer]
algorithm = "saes"
lambda = 4
mu = 2

[budget]
max_evals = 40
"#,
        out.display()
    )
}

#[test]
fn optimize_against_remote_objective() {
    let server = MockServer::start(Behavior::Healthy);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "remote.toml", &remote_config(&out, &server.url));
    let o = esid(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 40 search evaluations per seed plus one logit request for diagnostics
    assert_eq!(server.calls(), 2 * 41);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("result_seed0.json")).unwrap()).unwrap();
    assert!(report["confidence"]["global_rank"].as_f64().unwrap() >= 1.0);
}

#[test]
fn remote_failure_exits_3() {
    let server = MockServer::start(Behavior::AlwaysFail);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "remote.toml", &remote_config(&tmp.path().join("run"), &server.url));
    let o = esid(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

use std::fs;
use std::path::Path;

use byzsgd::harness::{read_csv, run_experiment, trace_from_rows, validate_experiment, Experiment, Overrides};
use byzsgd::topology::Mode;

const SINGLE: &str = r#"
[topology]
n_ps = 4
f_ps = 1
q_ps = 3
n_w = 7
f_w = 2
q_w = 5
admission = "relaxed"

[task]
dim = 5
theta_star = 1.0
noise_sigma = 0.01
batch = 64

[attack.servers]
strategy = "reversed"
count = 1

[run]
steps = 150
seed = 11
"#;

fn write(dir: &Path, text: &str) -> Experiment {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    Experiment::load(path).unwrap()
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write(dir.path(), SINGLE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_experiment(&exp, &a).unwrap();
    run_experiment(&exp, &b).unwrap();
    let first = fs::read(a.join("run.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("run.csv")).unwrap());

    let mut other = exp.clone();
    Overrides { seed: Some(12), mode: None }.apply(&mut other);
    run_experiment(&other, &b).unwrap();
    assert_ne!(first, fs::read(b.join("run.csv")).unwrap());
}

#[test]
fn csv_alone_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write(dir.path(), SINGLE);
    let summary = run_experiment(&exp, dir.path()).unwrap().remove(0);
    let trace = trace_from_rows(&read_csv(&summary.csv).unwrap()).unwrap();
    assert_eq!(trace.steps.len() as u64, summary.steps);
    assert_eq!(trace.final_grad_norm(), summary.final_grad_norm);
    assert!(summary.final_grad_norm < 1e-2, "{}", summary.final_grad_norm);
}

#[test]
fn sweep_writes_one_file_per_point_and_an_index() {
    let dir = tempfile::tempdir().unwrap();
    let text = SINGLE.replace("batch = 64", "batch = [16, 64]").replace("seed = 11", "seed = [1, 2]");
    let exp = write(dir.path(), &text);
    let out = dir.path().join("out");
    let runs = run_experiment(&exp, &out).unwrap();
    assert_eq!(runs.len(), 4);
    for i in 0..4 {
        assert!(out.join(format!("point-{i:03}.csv")).exists());
    }
    let index = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(index.lines().count(), 5);
    assert!(index.contains("task.batch=16,run.seed=1"), "{index}");
}

#[test]
fn sync_override_runs_the_filters() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = write(dir.path(), &SINGLE.replace("q_w = 5", "q_w = 7"));
    Overrides { seed: None, mode: Some(Mode::Sync) }.apply(&mut exp);
    let summary = run_experiment(&exp, dir.path()).unwrap().remove(0);
    let rows = read_csv(&summary.csv).unwrap();
    let trace = trace_from_rows(&rows).unwrap();
    assert!(trace.total_pulls() > 0);
}

#[test]
fn validation_flags_a_violated_variance_bound() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), SINGLE);
    assert!(validate_experiment(&ok).unwrap().iter().all(|v| v.passed()));

    let noisy = write(dir.path(), &SINGLE.replace("noise_sigma = 0.01", "noise_sigma = 50.0"));
    let reports = validate_experiment(&noisy).unwrap();
    assert!(!reports[0].passed());
}

#[test]
fn infeasible_topology_is_rejected_with_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write(dir.path(), &SINGLE.replace("q_ps = 3", "q_ps = 1"));
    let err = exp.points().unwrap_err().to_string();
    assert!(err.contains("q_ps"), "{err}");
}

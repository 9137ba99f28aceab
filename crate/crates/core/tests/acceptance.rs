//! One test per acceptance check. Each prints a single pass/fail line.

use byzsgd::harness::run_check;

fn check(name: &str) {
    let report = run_check(name).expect("check runs");
    println!("{report}");
    assert!(report.passed, "{report}");
}

#[test]
fn mda_oracle() {
    check("mda-oracle");
}

#[test]
fn mda_deviation() {
    check("mda-deviation");
}

#[test]
fn median_safety() {
    check("median-safety");
}

#[test]
fn expected_contraction() {
    check("expected-contraction");
}

#[test]
fn zero_byzantine() {
    check("zero-byzantine");
}

#[test]
fn worker_attack() {
    check("worker-attack");
}

#[test]
fn server_attack() {
    check("server-attack");
}

#[test]
fn assumption_boundary() {
    check("assumption-boundary");
}

#[test]
fn filter_accuracy() {
    check("filter-accuracy");
}

#[test]
fn period_sweep() {
    check("period-sweep");
}

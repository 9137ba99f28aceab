//! Shared fixtures for the benchmarks.

use byzsgd::simnet::SimConfig;
use byzsgd::{Admission, LrSchedule, Mode, ParamVector, RawTopology, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` vectors of dimension `dim` with uniform coordinates in [-1, 1].
pub fn random_vectors(count: usize, dim: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ParamVector::from((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()))
        .collect()
}

/// A small attack-free deployment on a quadratic task.
pub fn small_config(mode: Mode, dim: usize, steps: u64) -> SimConfig {
    let topo = RawTopology::new((4, 1, 3), (7, 2, if mode == Mode::Sync { 7 } else { 5 }), mode)
        .with_dim(dim)
        .with_admission(Admission::Relaxed)
        .validate()
        .expect("valid topology");
    let task = Task::quadratic(ParamVector::filled(dim, 1.0), 0.01, 16).expect("valid task");
    let mut cfg = SimConfig::new(topo, task, LrSchedule::constant(0.1).expect("valid rate"));
    cfg.steps = steps;
    cfg
}

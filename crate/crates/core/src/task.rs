//! Desk-scale learning tasks with exact gradients and a seeded stochastic
//! gradient oracle.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// `0.5 * ||theta - theta_star||^2`
    Quadratic,
    /// Mean logistic loss over a synthetic, seeded dataset.
    Logistic,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(TaskKind::Quadratic),
            "logistic" => Ok(TaskKind::Logistic),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// Parameters of the synthetic logistic-regression dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticSpec {
    pub dim: usize,
    pub samples: usize,
    /// Probability of flipping each planted label.
    pub flip_prob: f64,
    pub seed: u64,
}

impl LogisticSpec {
    pub fn new(dim: usize, samples: usize, seed: u64) -> Self {
        Self {
            dim,
            samples,
            flip_prob: 0.05,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
enum Objective {
    Quadratic {
        theta_star: ParamVector,
    },
    Logistic {
        spec: LogisticSpec,
        /// Row-major, `samples x dim`.
        features: Vec<f64>,
        /// +1 or -1.
        labels: Vec<f64>,
    },
}

/// A loss with its exact gradient and Lipschitz bound.
#[derive(Debug, Clone)]
pub struct Task {
    objective: Objective,
    dim: usize,
    noise_sigma: f64,
    batch_ref: usize,
}

/// One stochastic gradient estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub value: ParamVector,
    pub batch_size: usize,
}

fn check_noise(noise_sigma: f64, batch_ref: usize) -> Result<()> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_sigma must be non-negative, got {noise_sigma}"
        )));
    }
    if batch_ref == 0 {
        return Err(Error::InvalidArgument("batch_ref must be positive".into()));
    }
    Ok(())
}

impl Task {
    /// Quadratic bowl centred on `theta_star`. Gradient noise is Gaussian with
    /// per-coordinate std `noise_sigma * sqrt(batch_ref / b)` at batch size `b`.
    pub fn quadratic(theta_star: ParamVector, noise_sigma: f64, batch_ref: usize) -> Result<Self> {
        check_noise(noise_sigma, batch_ref)?;
        if theta_star.dim() == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !theta_star.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self {
            dim: theta_star.dim(),
            objective: Objective::Quadratic { theta_star },
            noise_sigma,
            batch_ref,
        })
    }

    /// Logistic regression on spherical Gaussian features with labels from a
    /// planted separator, each flipped with probability `spec.flip_prob`.
    /// Minibatch sampling supplies the gradient noise; `noise_sigma` adds Gaussian
    /// noise on top, scaled like the quadratic task.
    pub fn logistic(spec: LogisticSpec, noise_sigma: f64, batch_ref: usize) -> Result<Self> {
        check_noise(noise_sigma, batch_ref)?;
        if spec.dim == 0 || spec.samples == 0 {
            return Err(Error::InvalidArgument(
                "logistic task needs positive dim and sample count".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let separator: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut features = Vec::with_capacity(spec.samples * spec.dim);
        let mut labels = Vec::with_capacity(spec.samples);
        for _ in 0..spec.samples {
            let row: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let margin: f64 = row.iter().zip(&separator).map(|(x, w)| x * w).sum();
            let mut label = if margin >= 0.0 { 1.0 } else { -1.0 };
            if rng.random_bool(spec.flip_prob) {
                label = -label;
            }
            features.extend(row);
            labels.push(label);
        }
        Ok(Self::logistic_from_data(spec, features, labels, noise_sigma, batch_ref))
    }

    fn logistic_from_data(
        spec: LogisticSpec,
        features: Vec<f64>,
        labels: Vec<f64>,
        noise_sigma: f64,
        batch_ref: usize,
    ) -> Self {
        Self {
            dim: spec.dim,
            objective: Objective::Logistic {
                spec,
                features,
                labels,
            },
            noise_sigma,
            batch_ref,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self.objective {
            Objective::Quadratic { .. } => TaskKind::Quadratic,
            Objective::Logistic { .. } => TaskKind::Logistic,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn batch_ref(&self) -> usize {
        self.batch_ref
    }

    /// The quadratic optimum, if any.
    pub fn theta_star(&self) -> Option<&ParamVector> {
        match &self.objective {
            Objective::Quadratic { theta_star } => Some(theta_star),
            Objective::Logistic { .. } => None,
        }
    }

    pub fn logistic_spec(&self) -> Option<LogisticSpec> {
        match &self.objective {
            Objective::Logistic { spec, .. } => Some(*spec),
            Objective::Quadratic { .. } => None,
        }
    }

    /// Same objective, different noise level.
    pub fn with_noise(&self, noise_sigma: f64) -> Result<Self> {
        check_noise(noise_sigma, self.batch_ref)?;
        Ok(Self {
            noise_sigma,
            ..self.clone()
        })
    }

    fn check_dim(&self, theta: &ParamVector) -> Result<()> {
        if theta.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: theta.dim(),
            });
        }
        Ok(())
    }

    pub fn loss(&self, theta: &ParamVector) -> Result<f64> {
        self.check_dim(theta)?;
        Ok(match &self.objective {
            Objective::Quadratic { theta_star } => 0.5 * theta.squared_distance(theta_star),
            Objective::Logistic {
                features, labels, ..
            } => {
                let total: f64 = features
                    .chunks_exact(self.dim)
                    .zip(labels)
                    .map(|(x, &y)| softplus(-y * dot(x, theta.as_slice())))
                    .sum();
                total / labels.len() as f64
            }
        })
    }

    pub fn true_gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.check_dim(theta)?;
        Ok(match &self.objective {
            Objective::Quadratic { theta_star } => theta.sub(theta_star),
            Objective::Logistic {
                features, labels, ..
            } => {
                let mut acc = vec![0.0; self.dim];
                for (x, &y) in features.chunks_exact(self.dim).zip(labels) {
                    accumulate_logistic(&mut acc, x, y, theta.as_slice());
                }
                let n = labels.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                ParamVector::from(acc)
            }
        })
    }

    /// Unbiased gradient estimate at `theta` from a batch of `batch_size`.
    pub fn sample_gradient<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<GradientSample> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.check_dim(theta)?;
        let mut value = match &self.objective {
            Objective::Quadratic { .. } => self.true_gradient(theta)?.into_inner(),
            Objective::Logistic {
                features, labels, ..
            } => {
                let mut acc = vec![0.0; self.dim];
                for _ in 0..batch_size {
                    let i = rng.random_range(0..labels.len());
                    let x = &features[i * self.dim..(i + 1) * self.dim];
                    accumulate_logistic(&mut acc, x, labels[i], theta.as_slice());
                }
                let b = batch_size as f64;
                acc.iter_mut().for_each(|a| *a /= b);
                acc
            }
        };
        if self.noise_sigma > 0.0 {
            let std = self.noise_std(batch_size);
            let normal = Normal::new(0.0, std).expect("std is finite and positive");
            for v in &mut value {
                *v += normal.sample(rng);
            }
        }
        Ok(GradientSample {
            value: ParamVector::from(value),
            batch_size,
        })
    }

    /// Per-coordinate std of the additive Gaussian noise at batch size `b`.
    pub fn noise_std(&self, batch_size: usize) -> f64 {
        self.noise_sigma * (self.batch_ref as f64 / batch_size as f64).sqrt()
    }

    /// Upper bound `l` on the gradient's Lipschitz constant.
    ///
    /// Quadratic: exactly 1. Logistic: the Hessian is
    /// `(1/m) sum s_i (1 - s_i) x_i x_i^T` with `s_i (1 - s_i) <= 1/4`, and the
    /// largest eigenvalue of `(1/m) sum x_i x_i^T` is at most `max_i ||x_i||^2`,
    /// so `l = 0.25 * max_i ||x_i||^2`, floored at machine epsilon for an
    /// all-zero dataset.
    pub fn lipschitz_constant(&self) -> f64 {
        match &self.objective {
            Objective::Quadratic { .. } => 1.0,
            Objective::Logistic { features, .. } => {
                let max_sq = features
                    .chunks_exact(self.dim)
                    .map(|x| dot(x, x))
                    .fold(0.0, f64::max);
                (0.25 * max_sq).max(f64::EPSILON)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Adds the gradient of `softplus(-y <x, theta>)` into `acc`.
fn accumulate_logistic(acc: &mut [f64], x: &[f64], y: f64, theta: &[f64]) {
    let coef = -y * sigmoid(-y * dot(x, theta));
    for (a, xi) in acc.iter_mut().zip(x) {
        *a += coef * xi;
    }
}

/// Outcome of the variance-to-norm measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub n_w: usize,
    pub f_w: usize,
    /// `(n_w - f_w) / (2 f_w)`: the largest admissible ratio at `kappa = 1`.
    pub threshold: f64,
    /// Largest `kappa` for which the bound holds at the largest measured batch.
    pub kappa_margin: f64,
    /// Estimated `E||g - Eg||` at the smallest batch, an upper bound over the sweep.
    pub sigma_prime_est: f64,
    /// `sqrt(E||g - Eg||^2) / ||grad L||` per batch size.
    pub ratio_by_batch: BTreeMap<usize, f64>,
}

impl AssumptionReport {
    /// Whether the bound holds with `kappa = 1` at `batch`.
    pub fn holds_at(&self, batch: usize) -> Option<bool> {
        self.ratio_by_batch.get(&batch).map(|r| *r <= self.threshold)
    }

    pub fn holds_everywhere(&self) -> bool {
        self.ratio_by_batch.values().all(|r| *r <= self.threshold)
    }
}

/// `(n_w - f_w) / (2 f_w)`, infinite when no worker is Byzantine.
pub fn ratio_threshold(n_w: usize, f_w: usize) -> f64 {
    if f_w == 0 {
        f64::INFINITY
    } else {
        (n_w - f_w) as f64 / (2 * f_w) as f64
    }
}

/// Monte-Carlo estimate of the gradient variance-to-norm ratio at `theta`
/// for each batch size.
pub fn measure_variance_norm_ratio<R: Rng + ?Sized>(
    task: &Task,
    theta: &ParamVector,
    batch_sizes: &[usize],
    trials: usize,
    (n_w, f_w): (usize, usize),
    rng: &mut R,
) -> Result<AssumptionReport> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 trials, got {trials}"
        )));
    }
    if batch_sizes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if f_w > n_w {
        return Err(Error::InvalidArgument("f_w exceeds n_w".into()));
    }
    let grad_norm = task.true_gradient(theta)?.norm();
    if grad_norm == 0.0 {
        return Err(Error::UndefinedRatio);
    }

    let mut ratio_by_batch = BTreeMap::new();
    let mut mean_dev_by_batch = BTreeMap::new();
    for &b in batch_sizes {
        let samples = (0..trials)
            .map(|_| task.sample_gradient(theta, b, rng).map(|s| s.value))
            .collect::<Result<Vec<_>>>()?;
        let mean = crate::aggregation::average(&samples)?;
        let sq_dev: f64 = samples.iter().map(|g| g.squared_distance(&mean)).sum();
        let mean_dev: f64 =
            samples.iter().map(|g| g.distance(&mean)).sum::<f64>() / trials as f64;
        let std = (sq_dev / (trials - 1) as f64).sqrt();
        ratio_by_batch.insert(b, std / grad_norm);
        mean_dev_by_batch.insert(b, mean_dev);
    }

    let threshold = ratio_threshold(n_w, f_w);
    let best_ratio = *ratio_by_batch.values().next_back().expect("non-empty");
    let kappa_margin = if best_ratio == 0.0 {
        f64::INFINITY
    } else {
        threshold / best_ratio
    };
    let sigma_prime_est = *mean_dev_by_batch.values().next().expect("non-empty");

    Ok(AssumptionReport {
        n_w,
        f_w,
        threshold,
        kappa_margin,
        sigma_prime_est,
        ratio_by_batch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn bowl(dim: usize, noise: f64) -> Task {
        Task::quadratic(ParamVector::zeros(dim), noise, 16).unwrap()
    }

    #[test]
    fn quadratic_loss_and_gradient() {
        let star = ParamVector::from(vec![1.0, -2.0]);
        let task = Task::quadratic(star.clone(), 0.0, 1).unwrap();
        assert_eq!(task.loss(&star).unwrap(), 0.0);
        assert_eq!(task.true_gradient(&star).unwrap(), ParamVector::zeros(2));

        let task = bowl(1, 0.0);
        assert_eq!(task.loss(&ParamVector::from(vec![2.0])).unwrap(), 2.0);

        let g = bowl(2, 0.0)
            .true_gradient(&ParamVector::from(vec![3.0, 4.0]))
            .unwrap();
        assert_eq!(g.as_slice(), &[3.0, 4.0]);
        assert_eq!(g.norm(), 5.0);
    }

    #[test]
    fn dimension_mismatch() {
        let task = bowl(3, 0.0);
        assert!(matches!(
            task.loss(&ParamVector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(task.true_gradient(&ParamVector::zeros(4)).is_err());
    }

    #[test]
    fn logistic_loss_at_origin_is_ln2() {
        let task = Task::logistic(LogisticSpec::new(5, 200, 3), 0.0, 1).unwrap();
        let loss = task.loss(&ParamVector::zeros(5)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    fn central_difference(task: &Task, theta: &ParamVector, h: f64) -> ParamVector {
        let coords: Vec<f64> = (0..theta.dim())
            .map(|i| {
                let mut plus = theta.clone().into_inner();
                let mut minus = plus.clone();
                plus[i] += h;
                minus[i] -= h;
                let lp = task.loss(&ParamVector::from(plus)).unwrap();
                let lm = task.loss(&ParamVector::from(minus)).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect();
        ParamVector::from(coords)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let tasks = [
            Task::quadratic(ParamVector::from(vec![0.5, -1.0, 2.0, 0.0]), 0.0, 1).unwrap(),
            Task::logistic(LogisticSpec::new(4, 128, 11), 0.0, 1).unwrap(),
        ];
        let mut r = rng(5);
        for task in &tasks {
            for _ in 0..100 {
                let theta = ParamVector::from(
                    (0..4).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<_>>(),
                );
                let exact = task.true_gradient(&theta).unwrap();
                let fd = central_difference(task, &theta, 1e-5);
                let rel = exact.distance(&fd) / exact.norm().max(1e-3);
                assert!(rel < 1e-6, "{:?}: relative error {rel}", task.kind());
            }
        }
    }

    #[test]
    fn zero_noise_sample_is_exact() {
        let task = Task::quadratic(ParamVector::from(vec![1.0, 2.0]), 0.0, 4).unwrap();
        let theta = ParamVector::from(vec![-3.0, 0.5]);
        let s = task.sample_gradient(&theta, 7, &mut rng(1)).unwrap();
        assert_eq!(s.value, task.true_gradient(&theta).unwrap());
        assert_eq!(s.batch_size, 7);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let task = Task::logistic(LogisticSpec::new(3, 64, 2), 0.1, 8).unwrap();
        let theta = ParamVector::from(vec![0.1, 0.2, 0.3]);
        let a = task.sample_gradient(&theta, 8, &mut rng(42)).unwrap();
        let b = task.sample_gradient(&theta, 8, &mut rng(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_batch_rejected() {
        let task = bowl(2, 1.0);
        assert!(task
            .sample_gradient(&ParamVector::zeros(2), 0, &mut rng(0))
            .is_err());
    }

    #[test]
    fn noise_std_scales_with_batch() {
        let task = bowl(1, 0.8);
        let theta = ParamVector::zeros(1);
        let mut r = rng(9);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| task.sample_gradient(&theta, 64, &mut r).unwrap().value[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        // batch 64 = 4 * batch_ref, so the std halves.
        assert!((std / 0.4 - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn samples_are_unbiased() {
        let tasks = [
            Task::quadratic(ParamVector::from(vec![1.0, -1.0, 0.5]), 0.7, 4).unwrap(),
            Task::logistic(LogisticSpec::new(3, 256, 4), 0.0, 1).unwrap(),
        ];
        let theta = ParamVector::from(vec![0.3, 0.1, -0.4]);
        let mut r = rng(17);
        let n = 10_000;
        for task in &tasks {
            let samples: Vec<ParamVector> = (0..n)
                .map(|_| task.sample_gradient(&theta, 4, &mut r).unwrap().value)
                .collect();
            let truth = task.true_gradient(&theta).unwrap();
            for i in 0..3 {
                let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n as f64;
                let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>()
                    / (n - 1) as f64;
                let tol = 4.0 * var.sqrt() / (n as f64).sqrt();
                assert!(
                    (mean - truth[i]).abs() <= tol,
                    "{:?} coord {i}: {mean} vs {}",
                    task.kind(),
                    truth[i]
                );
            }
        }
    }

    #[test]
    fn lipschitz_bounds() {
        assert_eq!(bowl(3, 0.0).lipschitz_constant(), 1.0);

        let spec = LogisticSpec::new(2, 3, 0);
        let zeros = Task::logistic_from_data(spec, vec![0.0; 6], vec![1.0, -1.0, 1.0], 0.0, 1);
        assert!(zeros.lipschitz_constant() > 0.0);

        let task = Task::logistic(LogisticSpec::new(4, 64, 8), 0.0, 1).unwrap();
        let l = task.lipschitz_constant();
        let mut r = rng(3);
        for _ in 0..100_000 {
            let x = ParamVector::from((0..4).map(|_| r.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let y = ParamVector::from((0..4).map(|_| r.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let lhs = task.true_gradient(&x).unwrap().distance(&task.true_gradient(&y).unwrap());
            assert!(lhs <= l * x.distance(&y) + 1e-12);
        }
    }

    #[test]
    fn ratio_zero_without_noise() {
        let task = bowl(4, 0.0);
        let report = measure_variance_norm_ratio(
            &task,
            &ParamVector::filled(4, 1.0),
            &[16, 64],
            100,
            (7, 2),
            &mut rng(0),
        )
        .unwrap();
        assert!(report.ratio_by_batch.values().all(|r| *r == 0.0));
        assert!(report.holds_everywhere());
        assert_eq!(report.kappa_margin, f64::INFINITY);
    }

    #[test]
    fn ratio_undefined_at_optimum() {
        let task = bowl(2, 1.0);
        assert!(matches!(
            measure_variance_norm_ratio(&task, &ParamVector::zeros(2), &[16], 100, (7, 2), &mut rng(0)),
            Err(Error::UndefinedRatio)
        ));
        assert!(measure_variance_norm_ratio(
            &task,
            &ParamVector::filled(2, 1.0),
            &[16],
            50,
            (7, 2),
            &mut rng(0)
        )
        .is_err());
    }

    #[test]
    fn ratio_halves_when_batch_quadruples() {
        let task = bowl(10, 1.0);
        let theta = ParamVector::filled(10, 1.0);
        let report =
            measure_variance_norm_ratio(&task, &theta, &[16, 64, 256], 4000, (7, 2), &mut rng(21))
                .unwrap();
        let r = &report.ratio_by_batch;
        assert!((r[&64] / r[&16] - 0.5).abs() < 0.5 * 0.15);
        assert!((r[&256] / r[&64] - 0.5).abs() < 0.5 * 0.15);
    }

    /// For `d = 10`, `||grad|| = sqrt(10)` and `batch_ref = 16`, the ratio at
    /// batch `b` is `sigma * sqrt(16 / b)`. The (7, 2) threshold is 1.25, so
    /// any `sigma` in (1.25, 5) violates it at b = 16 and satisfies it at
    /// b = 256; sigma = 2.5 gives ratios 2.5 and 0.625.
    #[test]
    fn engineered_assumption_boundary() {
        let task = bowl(10, 2.5);
        let theta = ParamVector::filled(10, 1.0);
        let report =
            measure_variance_norm_ratio(&task, &theta, &[16, 256], 2000, (7, 2), &mut rng(4)).unwrap();
        assert_eq!(report.threshold, 1.25);
        assert!((report.ratio_by_batch[&16] / 2.5 - 1.0).abs() < 0.05);
        assert!((report.ratio_by_batch[&256] / 0.625 - 1.0).abs() < 0.05);
        assert_eq!(report.holds_at(16), Some(false));
        assert_eq!(report.holds_at(256), Some(true));
    }
}

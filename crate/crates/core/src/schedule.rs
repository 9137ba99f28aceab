//! Learning-rate schedule and the scatter-phase length bound.

use crate::error::{Error, Result};

/// Inverse-time decay `eta0 / (1 + decay * t)`.
///
/// With `decay > 0` the rates sum to infinity while their squares do not;
/// `decay = 0` gives a constant rate for short experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    eta0: f64,
    decay: f64,
}

impl LrSchedule {
    pub fn new(eta0: f64, decay: f64) -> Result<Self> {
        if !(eta0.is_finite() && eta0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eta0 must be positive, got {eta0}"
            )));
        }
        if !(decay.is_finite() && decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "decay must be non-negative, got {decay}"
            )));
        }
        Ok(Self { eta0, decay })
    }

    pub fn constant(eta0: f64) -> Result<Self> {
        Self::new(eta0, 0.0)
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn rate(&self, step: u64) -> f64 {
        learning_rate(self, step)
    }

    /// The same schedule with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.eta0 * factor, self.decay)
    }
}

pub fn learning_rate(schedule: &LrSchedule, step: u64) -> f64 {
    schedule.eta0 / (1.0 + schedule.decay * step as f64)
}

/// Largest safe scatter-phase length, `max(1, floor(1 / (3 * l * eta0)))`.
///
/// Callers may configure any smaller period.
pub fn compute_gather_period(lipschitz: f64, eta0: f64) -> u64 {
    assert!(lipschitz > 0.0 && eta0 > 0.0, "l and eta0 must be positive");
    let bound = (1.0 / (3.0 * lipschitz * eta0)).floor();
    if bound >= u64::MAX as f64 {
        u64::MAX
    } else {
        (bound as u64).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rate_examples() {
        let flat = LrSchedule::new(0.1, 0.0).unwrap();
        assert_eq!(flat.rate(1000), 0.1);
        let decaying = LrSchedule::new(0.1, 1.0).unwrap();
        assert_eq!(decaying.rate(0), 0.1);
        assert!((decaying.rate(9) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(LrSchedule::new(0.0, 0.0).is_err());
        assert!(LrSchedule::new(0.1, -1.0).is_err());
        assert!(LrSchedule::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn gather_period_examples() {
        assert_eq!(compute_gather_period(1.0, 0.1), 3);
        assert_eq!(compute_gather_period(1.0, 1.0), 1);
        assert_eq!(compute_gather_period(0.001, 0.001), 333_333);
    }

    proptest! {
        #[test]
        fn rate_non_increasing(eta0 in 1e-6f64..10.0, decay in 0.0f64..10.0, t in 0u64..1_000_000) {
            let s = LrSchedule::new(eta0, decay).unwrap();
            prop_assert!(s.rate(t + 1) <= s.rate(t));
            prop_assert!(s.rate(t) > 0.0);
            if decay > 0.0 {
                prop_assert!(s.rate(t + 1) < s.rate(t));
            }
        }

        #[test]
        fn gather_period_antitone(l in 1e-3f64..10.0, eta in 1e-4f64..1.0, bump in 1.0f64..4.0) {
            let base = compute_gather_period(l, eta);
            prop_assert!(compute_gather_period(l * bump, eta) <= base);
            prop_assert!(compute_gather_period(l, eta * bump) <= base);
        }
    }
}

//! Node counts, quorums and the admission rules that bind them.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Quorum-based: nodes wait for the first `q` messages.
    Async,
    /// Workers pull a single model per step and vet it with filters.
    Sync,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Async => "async",
            Mode::Sync => "sync",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "async" => Ok(Mode::Async),
            "sync" => Ok(Mode::Sync),
            other => Err(Error::InvalidArgument(format!(
                "mode must be `sync` or `async`, got `{other}`"
            ))),
        }
    }
}

/// Which server-side inequality chain a topology must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Admission {
    /// `n_ps >= 3 f_ps + 2` and `q_ps >= 2 f_ps + 2`.
    #[default]
    Strict,
    /// Majority-only bounds: `n_ps >= 3 f_ps + 1` and `q_ps >= 2 f_ps + 1`.
    /// Covers small deployments such as four servers with one Byzantine, where
    /// every Median input set still holds a strict majority of correct models.
    Relaxed,
}

impl Admission {
    pub fn as_str(self) -> &'static str {
        match self {
            Admission::Strict => "strict",
            Admission::Relaxed => "relaxed",
        }
    }
}

impl std::str::FromStr for Admission {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Admission::Strict),
            "relaxed" => Ok(Admission::Relaxed),
            other => Err(Error::InvalidArgument(format!(
                "admission must be `strict` or `relaxed`, got `{other}`"
            ))),
        }
    }
}

/// Unvalidated topology fields, as read from a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawTopology {
    pub n_ps: usize,
    pub f_ps: usize,
    pub q_ps: usize,
    pub n_w: usize,
    pub f_w: usize,
    pub q_w: usize,
    pub dim: usize,
    pub mode: Mode,
    pub period: u64,
    pub admission: Admission,
}

impl RawTopology {
    /// Strict admission, `dim = 1`, `period = 1`.
    pub fn new(
        (n_ps, f_ps, q_ps): (usize, usize, usize),
        (n_w, f_w, q_w): (usize, usize, usize),
        mode: Mode,
    ) -> Self {
        Self {
            n_ps,
            f_ps,
            q_ps,
            n_w,
            f_w,
            q_w,
            dim: 1,
            mode,
            period: 1,
            admission: Admission::Strict,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_period(mut self, period: u64) -> Self {
        self.period = period;
        self
    }

    pub fn with_admission(mut self, admission: Admission) -> Self {
        self.admission = admission;
        self
    }

    pub fn validate(self) -> Result<Topology> {
        validate_topology(self)
    }
}

/// One violated inequality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonPositive(&'static str),
    WorkersAsync { n_w: usize, f_w: usize },
    WorkersSync { n_w: usize, f_w: usize },
    Servers { n_ps: usize, min: usize },
    ServerQuorumLow { q_ps: usize, min: usize },
    ServerQuorumHigh { q_ps: usize, max: usize },
    WorkerQuorumLow { q_w: usize, min: usize },
    WorkerQuorumHigh { q_w: usize, max: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositive(field) => write!(f, "{field} must be positive"),
            Violation::WorkersAsync { n_w, f_w } => {
                write!(f, "async mode needs n_w >= 3*f_w+1 = {} (n_w = {n_w})", 3 * f_w + 1)
            }
            Violation::WorkersSync { n_w, f_w } => {
                write!(f, "sync mode needs n_w >= 2*f_w+1 = {} (n_w = {n_w})", 2 * f_w + 1)
            }
            Violation::Servers { n_ps, min } => {
                write!(f, "n_ps = {n_ps} below the minimum {min} for f_ps")
            }
            Violation::ServerQuorumLow { q_ps, min } => {
                write!(f, "q_ps = {q_ps} below the 2*f_ps+2 bound {min}")
            }
            Violation::ServerQuorumHigh { q_ps, max } => {
                write!(f, "q_ps = {q_ps} exceeds n_ps - f_ps = {max}")
            }
            Violation::WorkerQuorumLow { q_w, min } => {
                write!(f, "q_w = {q_w} below the 2*f_w+1 bound {min}")
            }
            Violation::WorkerQuorumHigh { q_w, max } => {
                write!(f, "q_w = {q_w} exceeds its ceiling {max}")
            }
        }
    }
}

/// Every inequality a raw topology failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Non-fatal observations about an admitted topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyWarning {
    /// `q_ps > floor((n_ps - f_ps) / 2)`: the expected-contraction guarantee for
    /// the gather step does not apply, although Median stays safe.
    OutsideContractionRegime { q_ps: usize, bound: usize },
    /// Admitted only under [`Admission::Relaxed`].
    RelaxedAdmission,
}

impl fmt::Display for TopologyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OutsideContractionRegime { q_ps, bound } => write!(
                f,
                "q_ps = {q_ps} exceeds {bound}; gather keeps models safe but may not contract them"
            ),
            Self::RelaxedAdmission => write!(f, "admitted only under relaxed bounds"),
        }
    }
}

/// A validated deployment. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    raw: RawTopology,
}

impl Topology {
    pub fn n_ps(&self) -> usize {
        self.raw.n_ps
    }
    pub fn f_ps(&self) -> usize {
        self.raw.f_ps
    }
    pub fn q_ps(&self) -> usize {
        self.raw.q_ps
    }
    pub fn n_w(&self) -> usize {
        self.raw.n_w
    }
    pub fn f_w(&self) -> usize {
        self.raw.f_w
    }
    pub fn q_w(&self) -> usize {
        self.raw.q_w
    }
    pub fn dim(&self) -> usize {
        self.raw.dim
    }
    pub fn mode(&self) -> Mode {
        self.raw.mode
    }
    pub fn period(&self) -> u64 {
        self.raw.period
    }
    pub fn admission(&self) -> Admission {
        self.raw.admission
    }
    pub fn raw(&self) -> RawTopology {
        self.raw
    }

    pub fn is_gather_step(&self, step: u64) -> bool {
        step.is_multiple_of(self.raw.period)
    }

    pub fn warnings(&self) -> Vec<TopologyWarning> {
        let mut out = Vec::new();
        let bound = (self.raw.n_ps - self.raw.f_ps) / 2;
        if self.raw.q_ps > bound {
            out.push(TopologyWarning::OutsideContractionRegime {
                q_ps: self.raw.q_ps,
                bound,
            });
        }
        if self.raw.admission == Admission::Relaxed
            && !violations(&RawTopology {
                admission: Admission::Strict,
                ..self.raw
            })
            .is_empty()
        {
            out.push(TopologyWarning::RelaxedAdmission);
        }
        out
    }
}

fn violations(raw: &RawTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    let counts = [
        ("n_ps", raw.n_ps),
        ("q_ps", raw.q_ps),
        ("n_w", raw.n_w),
        ("q_w", raw.q_w),
        ("dim", raw.dim),
        ("T", raw.period as usize),
    ];
    for (name, value) in counts {
        if value == 0 {
            out.push(Violation::NonPositive(name));
        }
    }
    if !out.is_empty() {
        return out;
    }

    match raw.mode {
        Mode::Async if raw.n_w < 3 * raw.f_w + 1 => out.push(Violation::WorkersAsync {
            n_w: raw.n_w,
            f_w: raw.f_w,
        }),
        Mode::Sync if raw.n_w < 2 * raw.f_w + 1 => out.push(Violation::WorkersSync {
            n_w: raw.n_w,
            f_w: raw.f_w,
        }),
        _ => {}
    }

    let (min_servers, min_q_ps) = match raw.admission {
        Admission::Strict => (3 * raw.f_ps + 2, 2 * raw.f_ps + 2),
        Admission::Relaxed => (3 * raw.f_ps + 1, 2 * raw.f_ps + 1),
    };
    if raw.n_ps < min_servers {
        out.push(Violation::Servers {
            n_ps: raw.n_ps,
            min: min_servers,
        });
    }
    if raw.q_ps < min_q_ps {
        out.push(Violation::ServerQuorumLow {
            q_ps: raw.q_ps,
            min: min_q_ps,
        });
    }
    let max_q_ps = raw.n_ps.saturating_sub(raw.f_ps);
    if raw.q_ps > max_q_ps {
        out.push(Violation::ServerQuorumHigh {
            q_ps: raw.q_ps,
            max: max_q_ps,
        });
    }
    if raw.q_w < 2 * raw.f_w + 1 {
        out.push(Violation::WorkerQuorumLow {
            q_w: raw.q_w,
            min: 2 * raw.f_w + 1,
        });
    }
    // Synchronous servers wait for every worker, so the quorum may be all of them.
    let max_q_w = match raw.mode {
        Mode::Async => raw.n_w.saturating_sub(raw.f_w),
        Mode::Sync => raw.n_w,
    };
    if raw.q_w > max_q_w {
        out.push(Violation::WorkerQuorumHigh {
            q_w: raw.q_w,
            max: max_q_w,
        });
    }
    out
}

/// Admits `raw` iff every inequality holds; otherwise lists all that fail.
pub fn validate_topology(raw: RawTopology) -> Result<Topology> {
    let v = violations(&raw);
    if v.is_empty() {
        Ok(Topology { raw })
    } else {
        Err(Error::Topology(Violations(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn violated(raw: RawTopology) -> Vec<Violation> {
        match validate_topology(raw) {
            Err(Error::Topology(Violations(v))) => v,
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn server_quorum_lower_bound() {
        let raw = RawTopology::new((4, 0, 1), (9, 0, 1), Mode::Async);
        assert_eq!(
            violated(raw),
            vec![Violation::ServerQuorumLow { q_ps: 1, min: 2 }]
        );
        let ok = RawTopology::new((4, 0, 2), (9, 0, 1), Mode::Async);
        assert!(validate_topology(ok).is_ok());
    }

    #[test]
    fn server_quorum_upper_bound() {
        let raw = RawTopology::new((4, 1, 4), (9, 3, 7), Mode::Async);
        let v = violated(raw);
        assert!(v.contains(&Violation::ServerQuorumHigh { q_ps: 4, max: 3 }));
        let msg = validate_topology(raw).unwrap_err().to_string();
        assert!(msg.contains("exceeds n_ps - f_ps = 3"), "{msg}");
    }

    #[test]
    fn contraction_regime_without_warning() {
        let t = validate_topology(RawTopology::new((9, 1, 4), (7, 2, 5), Mode::Async)).unwrap();
        assert!(t.warnings().is_empty());
    }

    #[test]
    fn warns_outside_contraction_regime() {
        let t = validate_topology(RawTopology::new((5, 1, 4), (4, 1, 3), Mode::Async)).unwrap();
        assert_eq!(
            t.warnings(),
            vec![TopologyWarning::OutsideContractionRegime { q_ps: 4, bound: 2 }]
        );
    }

    #[test]
    fn sync_needs_fewer_workers() {
        let raw = RawTopology::new((5, 1, 4), (5, 2, 5), Mode::Sync);
        assert!(validate_topology(raw).is_ok());
        let raw = RawTopology {
            mode: Mode::Async,
            ..raw
        };
        assert!(violated(raw).contains(&Violation::WorkersAsync { n_w: 5, f_w: 2 }));
    }

    #[test]
    fn relaxed_admits_four_servers_one_byzantine() {
        let raw = RawTopology::new((4, 1, 3), (7, 2, 5), Mode::Async);
        assert!(validate_topology(raw).is_err());
        let t = validate_topology(raw.with_admission(Admission::Relaxed)).unwrap();
        assert!(t.warnings().contains(&TopologyWarning::RelaxedAdmission));
    }

    #[test]
    fn zero_period_rejected() {
        let raw = RawTopology::new((4, 0, 2), (3, 0, 3), Mode::Async).with_period(0);
        assert_eq!(violated(raw), vec![Violation::NonPositive("T")]);
    }

    /// Exhaustive cross-check of the admission rule against a literal transcription
    /// of the inequality chains, for every tuple with n_ps, n_w <= 12.
    #[test]
    fn exhaustive_small_tuples() {
        for mode in [Mode::Async, Mode::Sync] {
            for n_ps in 1..=12usize {
                for f_ps in 0..=n_ps {
                    for q_ps in 1..=n_ps {
                        for n_w in 1..=12usize {
                            for f_w in 0..=n_w {
                                for q_w in 1..=n_w {
                                    let workers_ok = match mode {
                                        Mode::Async => n_w >= 3 * f_w + 1,
                                        Mode::Sync => n_w >= 2 * f_w + 1,
                                    };
                                    let expected = workers_ok
                                        && n_ps >= 3 * f_ps + 2
                                        && 2 * f_ps + 2 <= q_ps
                                        && q_ps + f_ps <= n_ps
                                        && 2 * f_w + 1 <= q_w
                                        && match mode {
                                            Mode::Async => q_w + f_w <= n_w,
                                            Mode::Sync => q_w <= n_w,
                                        };
                                    let raw = RawTopology::new(
                                        (n_ps, f_ps, q_ps),
                                        (n_w, f_w, q_w),
                                        mode,
                                    );
                                    assert_eq!(
                                        validate_topology(raw).is_ok(),
                                        expected,
                                        "{raw:?}"
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

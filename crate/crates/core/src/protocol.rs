//! Server and worker state machines.
//!
//! Every operation mutates one node's state from explicit message values; the
//! step counter is advanced by the driver so scatter and gather at step `t`
//! observe the same `t`.

use rand::Rng;

use crate::aggregation::{median, quantile, Gar};
use crate::error::{Error, Result};
use crate::task::Task;
use crate::topology::Topology;
use crate::vector::ParamVector;

/// Relative slack on the Lipschitz quantile test. Identical inputs can produce
/// coefficients that differ from the recorded ones in the last bit.
const LIPSCHITZ_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTag {
    Scatter,
    Gather,
}

impl PhaseTag {
    pub fn at(topology: &Topology, step: u64) -> Self {
        if topology.is_gather_step(step) {
            PhaseTag::Gather
        } else {
            PhaseTag::Scatter
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseTag::Scatter => "scatter",
            PhaseTag::Gather => "gather",
        }
    }
}

impl std::str::FromStr for PhaseTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scatter" => Ok(PhaseTag::Scatter),
            "gather" => Ok(PhaseTag::Gather),
            other => Err(Error::InvalidArgument(format!("unknown phase `{other}`"))),
        }
    }
}

fn check_quorum(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::QuorumMismatch { expected, got })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub id: usize,
    pub model: ParamVector,
    pub step: u64,
}

impl ServerState {
    pub fn new(id: usize, model: ParamVector) -> Self {
        Self { id, model, step: 0 }
    }
}

/// How a server aggregates the gradients it receives in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScatterRule {
    pub gar: Gar,
    /// Number of gradients expected.
    pub quorum: usize,
    /// Byzantine inputs tolerated by the rule.
    pub f: usize,
}

impl ScatterRule {
    /// `q_w` gradients in asynchronous mode, all `n_w` in synchronous mode.
    pub fn for_topology(topology: &Topology, gar: Gar) -> Self {
        let quorum = match topology.mode() {
            crate::topology::Mode::Async => topology.q_w(),
            crate::topology::Mode::Sync => topology.n_w(),
        };
        Self {
            gar,
            quorum,
            f: topology.f_w(),
        }
    }

    /// Synchronous rule after `missing` senders stayed silent. Silent senders
    /// are necessarily Byzantine, so both the quorum and the tolerance shrink.
    pub fn without(self, missing: usize) -> Self {
        Self {
            quorum: self.quorum.saturating_sub(missing),
            f: self.f.saturating_sub(missing),
            ..self
        }
    }
}

/// `model <- model - eta * GAR(grads)`. Returns the indices (into `grads`)
/// that MDA averaged, when the rule is MDA.
pub fn server_scatter_step(
    server: &mut ServerState,
    grads: &[ParamVector],
    eta: f64,
    rule: ScatterRule,
) -> Result<Option<Vec<usize>>> {
    check_quorum(rule.quorum, grads.len())?;
    let (agg, selection) = rule.gar.aggregate_with_selection(grads, rule.f)?;
    if agg.dim() != server.model.dim() {
        return Err(Error::DimensionMismatch {
            expected: server.model.dim(),
            got: agg.dim(),
        });
    }
    server.model = server.model.step(eta, &agg);
    Ok(selection)
}

/// `model <- median(peer_models)`, where `peer_models` holds `quorum` models
/// including the server's own.
pub fn server_gather_step(
    server: &mut ServerState,
    peer_models: &[ParamVector],
    quorum: usize,
) -> Result<()> {
    check_quorum(quorum, peer_models.len())?;
    server.model = median(peer_models)?;
    Ok(())
}

/// Learning rate and gradient norm captured at the latest gather step; they
/// scale the outliers bound for the following scatter phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterAnchor {
    pub eta: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub id: usize,
    pub model: ParamVector,
    pub last_gradient: ParamVector,
    /// Speculated `model - eta * last_gradient` (synchronous mode).
    pub local_model: ParamVector,
    /// Coefficients of pulls that passed both filters, oldest first.
    pub lipschitz_history: Vec<f64>,
    /// Round-robin offset in `[1, n_ps]`, fixed for the run.
    pub rr_offset: usize,
    pub anchor: Option<FilterAnchor>,
    pub step: u64,
}

impl WorkerState {
    pub fn new(id: usize, model: ParamVector, rr_offset: usize) -> Self {
        let dim = model.dim();
        Self {
            id,
            local_model: model.clone(),
            model,
            last_gradient: ParamVector::zeros(dim),
            lipschitz_history: Vec::new(),
            rr_offset,
            anchor: None,
            step: 0,
        }
    }

    /// Computes a fresh gradient at the current model.
    pub fn refresh_gradient<R: Rng + ?Sized>(
        &mut self,
        task: &Task,
        batch: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.last_gradient = task.sample_gradient(&self.model, batch, rng)?.value;
        Ok(())
    }
}

/// Adopts the median of `q_ps` server models and computes a gradient there.
pub fn worker_async_step<R: Rng + ?Sized>(
    worker: &mut WorkerState,
    models: &[ParamVector],
    quorum: usize,
    task: &Task,
    batch: usize,
    rng: &mut R,
) -> Result<()> {
    check_quorum(quorum, models.len())?;
    worker.model = median(models)?;
    worker.refresh_gradient(task, batch, rng)
}

/// Predicts the next model from the worker's own gradient and stores it.
pub fn worker_speculate(worker: &mut WorkerState, eta: f64) -> ParamVector {
    worker.local_model = worker.model.step(eta, &worker.last_gradient);
    worker.local_model.clone()
}

/// Adopts the median of the server models; filters are bypassed.
pub fn worker_gather_step(
    worker: &mut WorkerState,
    models: &[ParamVector],
    quorum: usize,
) -> Result<()> {
    check_quorum(quorum, models.len())?;
    worker.model = median(models)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzVerdict {
    pub accepted: bool,
    /// `None` when the speculative step had zero length.
    pub coefficient: Option<f64>,
}

/// Compares the empirical coefficient
/// `||new_grad - last_gradient|| / ||local_model - model||` with the
/// `(n_ps - f_ps) / n_ps` quantile of past accepted coefficients. The first
/// `n_ps` pulls pass unconditionally while the history fills.
pub fn lipschitz_filter(
    worker: &WorkerState,
    new_grad: &ParamVector,
    topology: &Topology,
) -> Result<LipschitzVerdict> {
    let denom = worker.local_model.distance(&worker.model);
    if denom == 0.0 {
        return Ok(LipschitzVerdict {
            accepted: true,
            coefficient: None,
        });
    }
    let k = new_grad.distance(&worker.last_gradient) / denom;
    let warmup = topology.n_ps();
    let accepted = if worker.lipschitz_history.len() < warmup {
        true
    } else {
        let p = (topology.n_ps() - topology.f_ps()) as f64 / topology.n_ps() as f64;
        let threshold = quantile(&worker.lipschitz_history, p)?;
        k <= threshold * (1.0 + LIPSCHITZ_SLACK)
    };
    Ok(LipschitzVerdict {
        accepted,
        coefficient: Some(k),
    })
}

/// Largest admissible `||local_model - pulled||` at step `t >= 1`:
/// `eta * ||g|| * ((3T + 2)(n_w - f_w) / (4 f_w) + 2 ((t - 1) mod T))`.
/// Infinite when no worker is Byzantine.
pub fn outliers_bound(topology: &Topology, step: u64, anchor: FilterAnchor) -> f64 {
    let f_w = topology.f_w();
    if f_w == 0 {
        return f64::INFINITY;
    }
    let period = topology.period();
    let since_gather = step.saturating_sub(1) % period;
    let spread = (3 * period + 2) as f64 * (topology.n_w() - f_w) as f64 / (4 * f_w) as f64;
    anchor.eta * anchor.grad_norm * (spread + 2.0 * since_gather as f64)
}

/// Accepts a pulled model close enough to the worker's own speculation.
/// Identical models always pass, even when the bound has collapsed to zero.
pub fn outliers_filter(
    worker: &WorkerState,
    pulled: &ParamVector,
    step: u64,
    topology: &Topology,
    anchor: FilterAnchor,
) -> bool {
    let distance = worker.local_model.distance(pulled);
    distance == 0.0 || distance < outliers_bound(topology, step, anchor)
}

/// Outcome of one pulled model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PullRecord {
    pub server: usize,
    pub accepted: bool,
}

/// Everything a synchronous step did, for metrics.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SyncStepReport {
    pub pulls: Vec<PullRecord>,
    /// True when every pull was rejected and the worker kept its speculation.
    pub fell_back: bool,
}

impl SyncStepReport {
    pub fn rejects(&self) -> usize {
        self.pulls.iter().filter(|p| !p.accepted).count()
    }

    pub fn adopted(&self) -> Option<usize> {
        self.pulls.iter().find(|p| p.accepted).map(|p| p.server)
    }
}

/// One scatter step of a synchronous worker, run after [`worker_speculate`].
///
/// Pulls from servers `(rr_offset + t + i) mod n_ps` for `i = 0, 1, ...`,
/// computing a gradient at each pulled model and testing it with both filters.
/// `pull` returns `None` for a server that does not answer, which counts as a
/// rejection. After `n_ps` consecutive rejections the worker adopts its own
/// speculation.
pub fn worker_sync_step<R, P>(
    worker: &mut WorkerState,
    mut pull: P,
    task: &Task,
    batch: usize,
    step: u64,
    topology: &Topology,
    rng: &mut R,
) -> Result<SyncStepReport>
where
    R: Rng + ?Sized,
    P: FnMut(usize) -> Option<ParamVector>,
{
    let n_ps = topology.n_ps();
    let anchor = worker.anchor.ok_or_else(|| {
        Error::InvalidArgument("synchronous step before the first gather".into())
    })?;
    if topology.f_w() == 0 && step == 1 {
        log::warn!("f_w = 0: the outliers filter accepts every model");
    }
    let mut report = SyncStepReport::default();
    let start = worker.rr_offset as u64 + step;
    for i in 0..n_ps as u64 {
        let server = ((start + i) % n_ps as u64) as usize;
        let Some(pulled) = pull(server) else {
            report.pulls.push(PullRecord {
                server,
                accepted: false,
            });
            continue;
        };
        let new_grad = task.sample_gradient(&pulled, batch, rng)?.value;
        let verdict = lipschitz_filter(worker, &new_grad, topology)?;
        let accepted =
            verdict.accepted && outliers_filter(worker, &pulled, step, topology, anchor);
        report.pulls.push(PullRecord { server, accepted });
        if accepted {
            if let Some(k) = verdict.coefficient {
                worker.lipschitz_history.push(k);
            }
            worker.model = pulled;
            worker.last_gradient = new_grad;
            return Ok(report);
        }
    }
    log::debug!(
        "worker {} rejected all {n_ps} pulls at step {step}; keeping its speculation",
        worker.id
    );
    report.fell_back = true;
    worker.model = worker.local_model.clone();
    worker.refresh_gradient(task, batch, rng)?;
    Ok(report)
}

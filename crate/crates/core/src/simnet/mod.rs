//! Deterministic lock-step driver for a whole deployment.
//!
//! Each step runs the message exchanges of one training round. Quorum
//! composition comes from [`delivery`]; Byzantine messages are forged by
//! [`crate::adversary`] after the adversary has seen every honest message of
//! the same exchange. All randomness derives from the master seed through
//! [`seeds::SeedTree`], so a run is a pure function of its [`SimConfig`].

pub mod delivery;
pub mod metrics;
pub mod seeds;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adversary::{forge_gradients, forge_model, AttackSpec, AttackTarget, ForgeContext, Strategy};
use crate::aggregation::{coordwise_diameter_sum, l2_diameter, median, Gar};
use crate::error::{Error, Result};
use crate::protocol::{
    server_gather_step, server_scatter_step, worker_async_step, worker_gather_step,
    worker_speculate, worker_sync_step, FilterAnchor, PhaseTag, ScatterRule, ServerState,
    WorkerState,
};
use crate::schedule::LrSchedule;
use crate::task::Task;
use crate::topology::{Mode, Topology};
use crate::vector::ParamVector;

pub use delivery::{
    joint_rho, sample_delivering_config, DeliveringConfig, Exchange, Fill, QuorumShape,
};
pub use metrics::{MetricsTrace, ServerMetrics, StepMetrics};
pub use seeds::{Purpose, Role, SeedTree};

/// Common initial model of every node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitModel {
    /// Every coordinate equal to the value.
    Constant(f64),
    /// I.i.d. normal coordinates with the given std, drawn from the master seed.
    Gaussian { std: f64 },
}

impl Default for InitModel {
    fn default() -> Self {
        InitModel::Constant(0.0)
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub task: Task,
    pub schedule: LrSchedule,
    pub gar: Gar,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub init: InitModel,
    pub server_attack: Option<AttackSpec>,
    pub worker_attack: Option<AttackSpec>,
    pub fill: Fill,
    /// Keep every correct server model in the trace.
    pub record_models: bool,
}

impl SimConfig {
    /// MDA, batch size `batch_ref`, 100 steps, seed 0, zero init, no attack.
    pub fn new(topology: Topology, task: Task, schedule: LrSchedule) -> Self {
        let batch_size = task.batch_ref();
        Self {
            topology,
            task,
            schedule,
            gar: Gar::Mda,
            batch_size,
            steps: 100,
            seed: 0,
            init: InitModel::default(),
            server_attack: None,
            worker_attack: None,
            fill: Fill::Uniform,
            record_models: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.dim() != self.topology.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.topology.dim(),
                got: self.task.dim(),
            });
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "steps and batch size must be positive".into(),
            ));
        }
        for (spec, target) in [
            (&self.server_attack, AttackTarget::ServerModels),
            (&self.worker_attack, AttackTarget::WorkerGradients),
        ] {
            if let Some(spec) = spec {
                if spec.target != target {
                    return Err(Error::InvalidArgument(format!(
                        "attack on {} configured in the {} slot",
                        spec.target.as_str(),
                        target.as_str()
                    )));
                }
                spec.check(&self.topology)?;
            }
        }
        if let InitModel::Gaussian { std } = self.init {
            if !(std.is_finite() && std >= 0.0) {
                return Err(Error::InvalidArgument(format!("init std {std} is invalid")));
            }
        }
        Ok(())
    }
}

fn attack_parts(spec: &Option<AttackSpec>) -> (usize, Option<&Strategy>) {
    match spec {
        Some(s) if s.count > 0 => (s.count, Some(&s.strategy)),
        _ => (0, None),
    }
}

struct Driver<'a> {
    cfg: &'a SimConfig,
    topo: Topology,
    servers: Vec<ServerState>,
    workers: Vec<WorkerState>,
    byz_servers: usize,
    byz_workers: usize,
    server_strategy: Option<&'a Strategy>,
    worker_strategy: Option<&'a Strategy>,
    grad_rngs: Vec<ChaCha8Rng>,
    s2w_rng: ChaCha8Rng,
    w2s_rng: ChaCha8Rng,
    s2s_rng: ChaCha8Rng,
    server_adv_rng: ChaCha8Rng,
    worker_adv_rng: ChaCha8Rng,
}

/// The model a Byzantine server pretends to hold, addressed to `receiver`.
fn forged_server_model(
    strategy: &Strategy,
    honest: &[ParamVector],
    sender: usize,
    receiver: usize,
    step: u64,
    rng: &mut ChaCha8Rng,
) -> Option<ParamVector> {
    let ctx = ForgeContext {
        honest,
        reference: &honest[0],
        sender,
        receiver,
        step,
    };
    forge_model(strategy, &ctx, rng)
}

impl<'a> Driver<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let topo = cfg.topology;
        let seeds = SeedTree::new(cfg.seed);
        let (byz_servers, server_strategy) = attack_parts(&cfg.server_attack);
        let (byz_workers, worker_strategy) = attack_parts(&cfg.worker_attack);
        let correct_servers = topo.n_ps() - byz_servers;
        let correct_workers = topo.n_w() - byz_workers;

        let theta0 = match cfg.init {
            InitModel::Constant(v) => ParamVector::filled(topo.dim(), v),
            InitModel::Gaussian { std } => {
                let mut rng = seeds.stream(Role::Global, 0, Purpose::Init);
                ParamVector::from(
                    (0..topo.dim())
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect::<Vec<_>>(),
                )
            }
        };
        let servers = (0..correct_servers)
            .map(|i| ServerState::new(i, theta0.clone()))
            .collect();
        let workers = (0..correct_workers)
            .map(|j| {
                let rr = seeds
                    .stream(Role::Worker, j as u64, Purpose::RoundRobin)
                    .random_range(1..=topo.n_ps());
                WorkerState::new(j, theta0.clone(), rr)
            })
            .collect();
        let grad_rngs = (0..correct_workers)
            .map(|j| seeds.stream(Role::Worker, j as u64, Purpose::Gradient))
            .collect();

        let mut driver = Self {
            cfg,
            topo,
            servers,
            workers,
            byz_servers,
            byz_workers,
            server_strategy,
            worker_strategy,
            grad_rngs,
            s2w_rng: seeds.stream(Role::Network, 0, Purpose::Delivery),
            w2s_rng: seeds.stream(Role::Network, 1, Purpose::Delivery),
            s2s_rng: seeds.stream(Role::Network, 2, Purpose::Delivery),
            server_adv_rng: seeds.stream(Role::Adversary, 0, Purpose::Forge),
            worker_adv_rng: seeds.stream(Role::Adversary, 1, Purpose::Forge),
        };
        if topo.mode() == Mode::Sync {
            for (w, rng) in driver.workers.iter_mut().zip(&mut driver.grad_rngs) {
                w.refresh_gradient(&cfg.task, cfg.batch_size, rng)
                    .map_err(|e| e.at_node(0, format!("worker {}", w.id)))?;
            }
        }
        Ok(driver)
    }

    fn shape(&self, exchange: Exchange) -> QuorumShape {
        let (byz, strategy) = match exchange {
            Exchange::WorkersToServers => (self.byz_workers, self.worker_strategy),
            _ => (self.byz_servers, self.server_strategy),
        };
        let silent = strategy.is_some_and(Strategy::is_mute);
        QuorumShape::for_exchange(&self.topo, exchange, byz, silent, self.cfg.fill)
    }

    fn correct_server_count(&self) -> usize {
        self.servers.len()
    }

    fn server_models(&self) -> Vec<ParamVector> {
        self.servers.iter().map(|s| s.model.clone()).collect()
    }

    /// Models sent by the servers in `list` to `receiver`.
    fn models_for(
        &mut self,
        list: &[usize],
        honest: &[ParamVector],
        receiver: usize,
        step: u64,
    ) -> Vec<ParamVector> {
        let correct = self.correct_server_count();
        list.iter()
            .filter_map(|&id| {
                if id < correct {
                    Some(honest[id].clone())
                } else {
                    let strategy = self.server_strategy.expect("Byzantine sender implies a strategy");
                    forged_server_model(strategy, honest, id, receiver, step, &mut self.server_adv_rng)
                }
            })
            .collect()
    }

    /// Scatter: every correct server aggregates one quorum of gradients.
    fn scatter(&mut self, step: u64, eta: f64) -> Result<u64> {
        let honest: Vec<ParamVector> = self.workers.iter().map(|w| w.last_gradient.clone()).collect();
        let correct_workers = self.workers.len();
        let base_rule = ScatterRule::for_topology(&self.topo, self.cfg.gar);
        let lists: Vec<Vec<usize>> = match self.topo.mode() {
            Mode::Async => {
                let shape = self.shape(Exchange::WorkersToServers);
                sample_delivering_config(
                    &mut self.w2s_rng,
                    Exchange::WorkersToServers,
                    &shape,
                    self.servers.len(),
                )?
                .lists
            }
            Mode::Sync => vec![(0..self.topo.n_w()).collect(); self.servers.len()],
        };
        let mut byz_selected = 0;
        for (i, list) in lists.iter().enumerate() {
            let byz_ids: Vec<usize> = list.iter().copied().filter(|&id| id >= correct_workers).collect();
            let forged = match self.worker_strategy {
                Some(strategy) if !byz_ids.is_empty() => forge_gradients(
                    strategy,
                    &honest,
                    &byz_ids,
                    i,
                    step,
                    &mut self.worker_adv_rng,
                )?,
                _ => Vec::new(),
            };
            let mut grads = Vec::with_capacity(list.len());
            let mut senders = Vec::with_capacity(list.len());
            for &id in list.iter().filter(|&&id| id < correct_workers) {
                grads.push(honest[id].clone());
                senders.push(id);
            }
            for (id, g) in byz_ids.iter().zip(forged) {
                grads.push(g);
                senders.push(*id);
            }
            let rule = base_rule.without(list.len() - grads.len());
            let selection = server_scatter_step(&mut self.servers[i], &grads, eta, rule)
                .map_err(|e| e.at_node(step, format!("server {i}")))?;
            if let Some(subset) = selection {
                byz_selected += subset
                    .iter()
                    .filter(|&&k| senders[k] >= correct_workers)
                    .count() as u64;
            }
        }
        Ok(byz_selected)
    }

    /// Median exchange between servers.
    fn gather_servers(&mut self, step: u64) -> Result<()> {
        let snapshot = self.server_models();
        let shape = self.shape(Exchange::ServersToServers);
        let config = sample_delivering_config(
            &mut self.s2s_rng,
            Exchange::ServersToServers,
            &shape,
            self.servers.len(),
        )?;
        for (i, list) in config.lists.iter().enumerate() {
            let models = self.models_for(list, &snapshot, i, step);
            server_gather_step(&mut self.servers[i], &models, models.len())
                .map_err(|e| e.at_node(step, format!("server {i}")))?;
        }
        Ok(())
    }

    fn step_async(&mut self, step: u64, eta: f64, gather: bool) -> Result<u64> {
        let cfg = self.cfg;
        let snapshot = self.server_models();
        let shape = self.shape(Exchange::ServersToWorkers);
        let config = sample_delivering_config(
            &mut self.s2w_rng,
            Exchange::ServersToWorkers,
            &shape,
            self.workers.len(),
        )?;
        for (j, list) in config.lists.iter().enumerate() {
            let models = self.models_for(list, &snapshot, j, step);
            worker_async_step(
                &mut self.workers[j],
                &models,
                self.topo.q_ps(),
                &cfg.task,
                cfg.batch_size,
                &mut self.grad_rngs[j],
            )
            .map_err(|e| e.at_node(step, format!("worker {j}")))?;
        }

        let byz_selected = self.scatter(step, eta)?;

        if gather {
            self.gather_servers(step)?;
            let snapshot = self.server_models();
            let config = sample_delivering_config(
                &mut self.s2w_rng,
                Exchange::ServersToWorkers,
                &shape,
                self.workers.len(),
            )?;
            for (j, list) in config.lists.iter().enumerate() {
                let models = self.models_for(list, &snapshot, j, step);
                worker_gather_step(&mut self.workers[j], &models, self.topo.q_ps())
                    .map_err(|e| e.at_node(step, format!("worker {j}")))?;
            }
        }
        Ok(byz_selected)
    }

    fn step_sync(&mut self, step: u64, eta: f64, gather: bool, out: &mut StepMetrics) -> Result<()> {
        let cfg = self.cfg;
        out.byzantine_selected = self.scatter(step, eta)?;
        for w in &mut self.workers {
            worker_speculate(w, eta);
        }

        if gather {
            self.gather_servers(step)?;
            let snapshot = self.server_models();
            let everyone: Vec<usize> = (0..self.topo.n_ps()).collect();
            for j in 0..self.workers.len() {
                let models = self.models_for(&everyone, &snapshot, j, step);
                let w = &mut self.workers[j];
                let node = |e: Error| e.at_node(step, format!("worker {j}"));
                worker_gather_step(w, &models, models.len()).map_err(node)?;
                w.refresh_gradient(&cfg.task, cfg.batch_size, &mut self.grad_rngs[j])
                    .map_err(node)?;
                w.anchor = Some(FilterAnchor {
                    eta,
                    grad_norm: w.last_gradient.norm(),
                });
            }
            return Ok(());
        }

        let snapshot = self.server_models();
        let correct = snapshot.len();
        for j in 0..self.workers.len() {
            let server_strategy = self.server_strategy;
            let adv_rng = &mut self.server_adv_rng;
            let pull = |id: usize| {
                if id < correct {
                    Some(snapshot[id].clone())
                } else {
                    let strategy = server_strategy.expect("Byzantine sender implies a strategy");
                    forged_server_model(strategy, &snapshot, id, j, step, adv_rng)
                }
            };
            let report = worker_sync_step(
                &mut self.workers[j],
                pull,
                &cfg.task,
                cfg.batch_size,
                step,
                &self.topo,
                &mut self.grad_rngs[j],
            )
            .map_err(|e| e.at_node(step, format!("worker {j}")))?;
            out.pulls += report.pulls.len() as u64;
            out.filter_rejects += report.rejects() as u64;
            out.fallbacks += u64::from(report.fell_back);
            for p in &report.pulls {
                let from_correct = p.server < correct;
                out.false_negatives += u64::from(from_correct && !p.accepted);
                out.false_positives += u64::from(!from_correct && p.accepted);
            }
        }
        Ok(())
    }

    fn step(&mut self, step: u64) -> Result<StepMetrics> {
        let eta = self.cfg.schedule.rate(step);
        let gather = self.topo.is_gather_step(step);
        let mut out = StepMetrics {
            step,
            phase: if gather { PhaseTag::Gather } else { PhaseTag::Scatter },
            servers: Vec::new(),
            delta: 0.0,
            max_pairwise: 0.0,
            filter_rejects: 0,
            pulls: 0,
            false_negatives: 0,
            false_positives: 0,
            fallbacks: 0,
            byzantine_selected: 0,
            models: None,
        };
        match self.topo.mode() {
            Mode::Async => out.byzantine_selected = self.step_async(step, eta, gather)?,
            Mode::Sync => self.step_sync(step, eta, gather, &mut out)?,
        }
        for s in &mut self.servers {
            s.step = step + 1;
        }
        for w in &mut self.workers {
            w.step = step + 1;
        }

        let models = self.server_models();
        for s in &self.servers {
            out.servers.push(ServerMetrics {
                server_id: s.id,
                loss: self.cfg.task.loss(&s.model)?,
                grad_norm: self.cfg.task.true_gradient(&s.model)?.norm(),
            });
        }
        out.delta = coordwise_diameter_sum(&models)?;
        out.max_pairwise = l2_diameter(&models)?;
        if self.cfg.record_models {
            out.models = Some(models);
        }
        Ok(out)
    }
}

/// Runs the configured number of steps and returns one record per step.
pub fn run(cfg: &SimConfig) -> Result<MetricsTrace> {
    cfg.validate()?;
    for warning in cfg.topology.warnings() {
        log::info!("topology: {warning:?}");
    }
    let mut driver = Driver::new(cfg)?;
    let mut trace = MetricsTrace::default();
    for t in 0..cfg.steps {
        trace.steps.push(driver.step(t)?);
    }
    Ok(trace)
}

/// Correct servers' models after a median exchange in which every correct
/// server takes `q_ps` models (its own included) and Byzantine slots carry
/// whatever `forge` returns for `(sender, receiver)`. Used by the contraction
/// checks, which need gather rounds in isolation.
pub fn gather_round<R, F>(
    models: &[ParamVector],
    shape: &QuorumShape,
    rng: &mut R,
    mut forge: F,
) -> Result<Vec<ParamVector>>
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize) -> ParamVector,
{
    let correct = models.len();
    (0..correct)
        .map(|i| {
            let list = shape.sample(i, rng)?;
            let inputs: Vec<ParamVector> = list
                .iter()
                .map(|&id| if id < correct { models[id].clone() } else { forge(id, i) })
                .collect();
            median(&inputs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Admission, RawTopology};

    fn quad(dim: usize, star: f64, noise: f64) -> Task {
        Task::quadratic(ParamVector::filled(dim, star), noise, 16).unwrap()
    }

    fn topo(ps: (usize, usize, usize), w: (usize, usize, usize), mode: Mode, dim: usize, t: u64) -> Topology {
        RawTopology::new(ps, w, mode)
            .with_dim(dim)
            .with_period(t)
            .with_admission(Admission::Relaxed)
            .validate()
            .unwrap()
    }

    #[test]
    fn closed_form_decay_without_byzantines() {
        for mode in [Mode::Async, Mode::Sync] {
            let t = topo((3, 0, 3), (4, 0, 4), mode, 4, 2);
            let mut cfg = SimConfig::new(t, quad(4, 1.0, 0.0), LrSchedule::constant(0.1).unwrap());
            cfg.steps = 200;
            cfg.init = InitModel::Constant(3.0);
            let trace = run(&cfg).unwrap();
            for s in &trace.steps {
                let expected = 0.9f64.powi(s.step as i32 + 1) * 2.0 * 2.0;
                for m in &s.servers {
                    assert!((m.grad_norm - expected).abs() < 1e-10, "{mode:?} step {}", s.step);
                }
                assert_eq!(s.delta, 0.0);
            }
            assert!(trace.final_grad_norm() < 1e-6);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let t = topo((4, 1, 3), (7, 2, 5), Mode::Async, 3, 3);
        let mut cfg = SimConfig::new(t, quad(3, 1.0, 0.5), LrSchedule::new(0.1, 0.01).unwrap());
        cfg.steps = 50;
        cfg.seed = 9;
        cfg.server_attack = Some(AttackSpec::on_servers(Strategy::from_name("random").unwrap(), 1).unwrap());
        cfg.worker_attack = Some(AttackSpec::on_workers(Strategy::LieGradient { z_sigma: 1.0 }, 2).unwrap());
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 10;
        assert_ne!(a, run(&cfg).unwrap());
    }

    #[test]
    fn rejects_mismatched_config() {
        let t = topo((4, 1, 3), (7, 2, 5), Mode::Async, 3, 3);
        let mut cfg = SimConfig::new(t, quad(2, 0.0, 0.0), LrSchedule::constant(0.1).unwrap());
        assert!(matches!(run(&cfg), Err(Error::DimensionMismatch { .. })));
        cfg.task = quad(3, 0.0, 0.0);
        cfg.server_attack = Some(AttackSpec::on_workers(Strategy::Mute, 1).unwrap());
        assert!(run(&cfg).is_err());
        cfg.server_attack = Some(AttackSpec::on_servers(Strategy::Mute, 2).unwrap());
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn reversed_workers_never_selected() {
        let t = topo((4, 1, 3), (7, 2, 5), Mode::Async, 5, 3);
        let mut cfg = SimConfig::new(t, quad(5, 1.0, 0.0), LrSchedule::constant(0.1).unwrap());
        cfg.steps = 100;
        cfg.init = InitModel::Constant(4.0);
        let clean = run(&cfg).unwrap();
        cfg.worker_attack = Some(AttackSpec::on_workers(Strategy::Reversed { scale: 1.0 }, 2).unwrap());
        let attacked = run(&cfg).unwrap();
        assert_eq!(attacked.total_byzantine_selected(), 0);
        for (a, b) in clean.steps.iter().zip(&attacked.steps) {
            assert_eq!(a.servers, b.servers);
        }
    }

    #[test]
    fn mute_everywhere_matches_attack_free() {
        for mode in [Mode::Async, Mode::Sync] {
            let t = topo((4, 1, 3), (7, 2, 5), mode, 3, 3);
            let mut cfg = SimConfig::new(t, quad(3, 2.0, 0.0), LrSchedule::new(0.1, 0.01).unwrap());
            cfg.steps = 60;
            cfg.init = InitModel::Constant(-1.0);
            cfg.record_models = true;
            let clean = run(&cfg).unwrap();
            cfg.server_attack = Some(AttackSpec::on_servers(Strategy::Mute, 1).unwrap());
            cfg.worker_attack = Some(AttackSpec::on_workers(Strategy::Mute, 2).unwrap());
            let muted = run(&cfg).unwrap();
            for (a, b) in clean.steps.iter().zip(&muted.steps) {
                let (ma, mb) = (a.models.as_ref().unwrap(), b.models.as_ref().unwrap());
                for (x, y) in ma.iter().zip(mb) {
                    assert!(x.max_abs_diff(y) <= 1e-12, "{mode:?} step {}", a.step);
                }
            }
        }
    }

    #[test]
    fn node_errors_carry_location() {
        let err = Error::QuorumMismatch { expected: 3, got: 2 }.at_node(7, "server 1");
        assert_eq!(
            err.to_string(),
            "step 7, server 1: quorum mismatch: expected 3 messages, got 2"
        );
    }

    #[test]
    fn gather_round_never_widens() {
        use rand::SeedableRng;
        let t = topo((9, 1, 4), (7, 2, 5), Mode::Async, 2, 1);
        let shape = QuorumShape::for_exchange(&t, Exchange::ServersToServers, 1, false, Fill::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let models: Vec<ParamVector> = (0..8)
            .map(|i| ParamVector::from(vec![i as f64, (i * i) as f64]))
            .collect();
        let before = coordwise_diameter_sum(&models).unwrap();
        let after = gather_round(&models, &shape, &mut rng, |_, r| {
            ParamVector::filled(2, if r % 2 == 0 { 1e6 } else { -1e6 })
        })
        .unwrap();
        assert!(coordwise_diameter_sum(&after).unwrap() <= before);
    }
}

//! Experiment files.
//!
//! An experiment is a TOML document with the sections below. Any key marked
//! *sweepable* also accepts a list; the experiment then expands to the
//! cartesian product of all lists, one independent seeded run per point.
//! Unknown keys are errors.
//!
//! | key                         | default                     | sweepable |
//! |-----------------------------|-----------------------------|-----------|
//! | `topology.n_ps`             | required                    |           |
//! | `topology.f_ps`             | 0                           |           |
//! | `topology.q_ps`             | required                    |           |
//! | `topology.n_w`              | required                    | yes       |
//! | `topology.f_w`              | 0                           | yes       |
//! | `topology.q_w`              | required                    | yes       |
//! | `topology.mode`             | `"async"`                   |           |
//! | `topology.period`           | largest safe gather period  | yes       |
//! | `topology.admission`        | `"strict"`                  |           |
//! | `task.kind`                 | `"quadratic"`               |           |
//! | `task.dim`                  | required                    |           |
//! | `task.theta_star`           | 0 (quadratic only)          |           |
//! | `task.noise_sigma`          | 0                           | yes       |
//! | `task.batch_ref`            | 16                          |           |
//! | `task.batch`                | `task.batch_ref`            | yes       |
//! | `task.samples`              | 1024 (logistic only)        |           |
//! | `task.flip_prob`            | 0.05 (logistic only)        |           |
//! | `task.data_seed`            | 0 (logistic only)           |           |
//! | `schedule.eta0`             | 0.1                         | yes       |
//! | `schedule.decay`            | 0                           |           |
//! | `attack.servers.strategy`   | none                        |           |
//! | `attack.servers.count`      | `topology.f_ps`             |           |
//! | `attack.workers.strategy`   | none                        |           |
//! | `attack.workers.count`      | `topology.f_w`              |           |
//! | `attack.*.scale`            | 1 (`reversed`)              | yes       |
//! | `attack.*.fraction`         | 0.1 (`partial_drop`)        |           |
//! | `attack.*.low`, `high`      | -1, 1 (`random`)            |           |
//! | `attack.*.z`                | 1.035 (`lie_model`)         | yes       |
//! | `attack.*.z_sigma`          | 1 (`lie_gradient`)          | yes       |
//! | `run.steps`                 | 100                         |           |
//! | `run.seed`                  | 0                           | yes       |
//! | `run.gar`                   | `"mda"`                     |           |
//! | `run.init`                  | 0 (every coordinate)        |           |
//! | `run.init_std`              | unset; Gaussian init if set |           |
//! | `run.fill`                  | `"uniform"`                 |           |
//!
//! The topology dimension is `task.dim`.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackSpec, AttackTarget, Strategy};
use crate::aggregation::Gar;
use crate::error::{Error, Result};
use crate::schedule::{compute_gather_period, LrSchedule};
use crate::simnet::{Fill, InitModel, SimConfig};
use crate::task::{LogisticSpec, Task, TaskKind};
use crate::topology::{Admission, Mode, RawTopology};
use crate::vector::ParamVector;

/// A scalar, or a list of values to sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

impl<T> From<T> for OneOrMany<T> {
    fn from(v: T) -> Self {
        OneOrMany::One(v)
    }
}

fn zero_usize() -> OneOrMany<usize> {
    OneOrMany::One(0)
}

fn zero_f64() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}

fn zero_u64() -> OneOrMany<u64> {
    OneOrMany::One(0)
}

fn is_zero_usize(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub n_ps: usize,
    #[serde(default, skip_serializing_if = "is_zero_usize")]
    pub f_ps: usize,
    pub q_ps: usize,
    pub n_w: OneOrMany<usize>,
    #[serde(default = "zero_usize")]
    pub f_w: OneOrMany<usize>,
    pub q_w: OneOrMany<usize>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<OneOrMany<u64>>,
    #[serde(default)]
    pub admission: Admission,
}

fn default_mode() -> Mode {
    Mode::Async
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    #[serde(default = "default_kind")]
    pub kind: TaskKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<f64>,
    #[serde(default = "zero_f64")]
    pub noise_sigma: OneOrMany<f64>,
    #[serde(default = "default_batch_ref")]
    pub batch_ref: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<OneOrMany<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

fn default_kind() -> TaskKind {
    TaskKind::Quadratic
}

fn default_batch_ref() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "default_eta0")]
    pub eta0: OneOrMany<f64>,
    #[serde(default)]
    pub decay: f64,
}

fn default_eta0() -> OneOrMany<f64> {
    OneOrMany::One(0.1)
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            eta0: default_eta0(),
            decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_sigma: Option<OneOrMany<f64>>,
}

impl AttackEntry {
    fn named(strategy: &str) -> Self {
        Self {
            strategy: strategy.to_string(),
            count: None,
            scale: None,
            fraction: None,
            low: None,
            high: None,
            z: None,
            z_sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servers: Option<AttackEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<AttackEntry>,
}

impl AttackSection {
    fn is_empty(&self) -> bool {
        self.servers.is_none() && self.workers.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "zero_u64")]
    pub seed: OneOrMany<u64>,
    #[serde(default)]
    pub gar: Gar,
    #[serde(default)]
    pub init: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    #[serde(default)]
    pub fill: Fill,
}

fn default_steps() -> u64 {
    100
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            seed: zero_u64(),
            gar: Gar::default(),
            init: 0.0,
            init_std: None,
            fill: Fill::default(),
        }
    }
}

/// The parsed document, before sweep expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub topology: TopologySection,
    pub task: TaskSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default, skip_serializing_if = "AttackSection::is_empty")]
    pub attack: AttackSection,
    #[serde(default)]
    pub run: RunSection,
}

/// Picks one value of a sweepable key.
trait Axis {
    fn len(&self) -> usize;
    fn pick(&mut self, i: usize) -> String;
}

impl<T: Clone + Display> Axis for OneOrMany<T> {
    fn len(&self) -> usize {
        match self {
            OneOrMany::One(_) => 1,
            OneOrMany::Many(vs) => vs.len(),
        }
    }

    fn pick(&mut self, i: usize) -> String {
        let v = self.values()[i].clone();
        let label = v.to_string();
        *self = OneOrMany::One(v);
        label
    }
}

type Accessor = fn(&mut ConfigFile) -> Option<&mut dyn Axis>;

const AXES: [(&str, Accessor); 13] = [
    ("topology.n_w", |c| Some(&mut c.topology.n_w)),
    ("topology.f_w", |c| Some(&mut c.topology.f_w)),
    ("topology.q_w", |c| Some(&mut c.topology.q_w)),
    ("topology.period", |c| c.topology.period.as_mut().map(|a| a as &mut dyn Axis)),
    ("task.noise_sigma", |c| Some(&mut c.task.noise_sigma)),
    ("task.batch", |c| c.task.batch.as_mut().map(|a| a as &mut dyn Axis)),
    ("schedule.eta0", |c| Some(&mut c.schedule.eta0)),
    ("attack.servers.scale", |c| c.attack.servers.as_mut()?.scale.as_mut().map(|a| a as &mut dyn Axis)),
    ("attack.servers.z", |c| c.attack.servers.as_mut()?.z.as_mut().map(|a| a as &mut dyn Axis)),
    ("attack.servers.z_sigma", |c| c.attack.servers.as_mut()?.z_sigma.as_mut().map(|a| a as &mut dyn Axis)),
    ("attack.workers.scale", |c| c.attack.workers.as_mut()?.scale.as_mut().map(|a| a as &mut dyn Axis)),
    ("attack.workers.z", |c| c.attack.workers.as_mut()?.z.as_mut().map(|a| a as &mut dyn Axis)),
    ("attack.workers.z_sigma", |c| c.attack.workers.as_mut()?.z_sigma.as_mut().map(|a| a as &mut dyn Axis)),
];

const SEED_AXIS: (&str, Accessor) = ("run.seed", |c| Some(&mut c.run.seed));

/// One expanded run of an experiment.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// `(key, value)` for every swept key, in a fixed order.
    pub labels: Vec<(String, String)>,
    pub config: SimConfig,
}

impl SweepPoint {
    pub fn label(&self) -> String {
        self.labels
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot serialize config: {e}")))
    }

    /// Every combination of swept values, in row-major order over the keys.
    pub fn expand(&self) -> Vec<(Vec<(String, String)>, ConfigFile)> {
        let mut points = vec![(Vec::new(), self.clone())];
        for (name, access) in AXES.iter().chain(std::iter::once(&SEED_AXIS)) {
            let mut next = Vec::new();
            for (labels, file) in points {
                let mut probe = file.clone();
                let len = access(&mut probe).map_or(1, |a| a.len());
                let swept = len > 1;
                for i in 0..len {
                    let mut f = file.clone();
                    let mut l = labels.clone();
                    if let Some(axis) = access(&mut f) {
                        let value = axis.pick(i);
                        if swept {
                            l.push((name.to_string(), value));
                        }
                    }
                    next.push((l, f));
                }
            }
            points = next;
        }
        points
    }

    /// The simulation described by a file without sweeps.
    pub fn to_sim_config(&self, path: &Path) -> Result<SimConfig> {
        let single = |name: &str, len: usize| {
            if len == 1 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "`{name}` lists {len} values; expand the sweep first"
                )))
            }
        };
        let mut probe = self.clone();
        for (name, access) in AXES.iter().chain(std::iter::once(&SEED_AXIS)) {
            if let Some(axis) = access(&mut probe) {
                single(name, axis.len())?;
            }
        }
        let first = |v: &OneOrMany<f64>| v.values()[0];
        let t = &self.topology;
        let k = &self.task;

        let noise = first(&k.noise_sigma);
        let task = match k.kind {
            TaskKind::Quadratic => {
                for (key, set) in [
                    ("samples", k.samples.is_some()),
                    ("flip_prob", k.flip_prob.is_some()),
                    ("data_seed", k.data_seed.is_some()),
                ] {
                    if set {
                        return Err(self.section_error(path, "[task]", format!("`{key}` applies to the logistic task only")));
                    }
                }
                Task::quadratic(ParamVector::filled(k.dim, k.theta_star.unwrap_or(0.0)), noise, k.batch_ref)?
            }
            TaskKind::Logistic => {
                if k.theta_star.is_some() {
                    return Err(self.section_error(path, "[task]", "`theta_star` applies to the quadratic task only".into()));
                }
                let mut spec = LogisticSpec::new(k.dim, k.samples.unwrap_or(1024), k.data_seed.unwrap_or(0));
                if let Some(p) = k.flip_prob {
                    spec.flip_prob = p;
                }
                Task::logistic(spec, noise, k.batch_ref)?
            }
        };
        let schedule = LrSchedule::new(first(&self.schedule.eta0), self.schedule.decay)?;
        let period = match &t.period {
            Some(p) => p.values()[0],
            None => compute_gather_period(task.lipschitz_constant(), schedule.eta0()),
        };
        let topology = RawTopology::new(
            (t.n_ps, t.f_ps, t.q_ps),
            (t.n_w.values()[0], t.f_w.values()[0], t.q_w.values()[0]),
            t.mode,
        )
        .with_dim(k.dim)
        .with_period(period)
        .with_admission(t.admission)
        .validate()?;

        let mut cfg = SimConfig::new(topology, task, schedule);
        cfg.batch_size = k.batch.as_ref().map_or(k.batch_ref, |b| b.values()[0]);
        cfg.steps = self.run.steps;
        cfg.seed = self.run.seed.values()[0];
        cfg.gar = self.run.gar;
        cfg.fill = self.run.fill;
        cfg.init = match self.run.init_std {
            Some(std) => {
                if self.run.init != 0.0 {
                    return Err(self.section_error(path, "[run]", "set either `init` or `init_std`".into()));
                }
                InitModel::Gaussian { std }
            }
            None => InitModel::Constant(self.run.init),
        };
        cfg.server_attack = self
            .attack
            .servers
            .as_ref()
            .map(|e| self.attack_spec(e, AttackTarget::ServerModels, t.f_ps, path))
            .transpose()?;
        cfg.worker_attack = self
            .attack
            .workers
            .as_ref()
            .map(|e| self.attack_spec(e, AttackTarget::WorkerGradients, t.f_w.values()[0], path))
            .transpose()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn section_error(&self, path: &Path, header: &str, message: String) -> Error {
        let line = std::fs::read_to_string(path)
            .ok()
            .and_then(|text| {
                text.lines()
                    .position(|l| l.trim() == header)
                    .map(|i| i + 1)
            })
            .unwrap_or(0);
        Error::Config {
            path: path.to_path_buf(),
            line,
            message,
        }
    }

    fn attack_spec(
        &self,
        entry: &AttackEntry,
        target: AttackTarget,
        default_count: usize,
        path: &Path,
    ) -> Result<AttackSpec> {
        let header = match target {
            AttackTarget::ServerModels => "[attack.servers]",
            AttackTarget::WorkerGradients => "[attack.workers]",
        };
        let fail = |message: String| self.section_error(path, header, message);
        let mut strategy = Strategy::from_name(&entry.strategy).map_err(|e| fail(e.to_string()))?;
        let scalar = |v: &Option<OneOrMany<f64>>| v.as_ref().map(|v| v.values()[0]);
        let params = [
            ("scale", scalar(&entry.scale)),
            ("fraction", entry.fraction),
            ("low", entry.low),
            ("high", entry.high),
            ("z", scalar(&entry.z)),
            ("z_sigma", scalar(&entry.z_sigma)),
        ];
        for (key, value) in params {
            let Some(value) = value else { continue };
            let slot = match (&mut strategy, key) {
                (Strategy::Reversed { scale }, "scale") => scale,
                (Strategy::PartialDrop { fraction }, "fraction") => fraction,
                (Strategy::Random { low, .. }, "low") => low,
                (Strategy::Random { high, .. }, "high") => high,
                (Strategy::LieModel { z }, "z") => z,
                (Strategy::LieGradient { z_sigma }, "z_sigma") => z_sigma,
                _ => {
                    return Err(fail(format!(
                        "`{key}` does not apply to strategy `{}`",
                        entry.strategy
                    )))
                }
            };
            *slot = value;
        }
        AttackSpec::new(target, strategy, entry.count.unwrap_or(default_count)).map_err(|e| fail(e.to_string()))
    }

    /// The file describing `cfg`. Custom attacks and non-constant quadratic
    /// optima have no file representation.
    pub fn from_sim_config(cfg: &SimConfig) -> Result<Self> {
        let t = &cfg.topology;
        let task = &cfg.task;
        let unrepresentable = |what: &str| Error::InvalidArgument(format!("{what} cannot be written to a config file"));
        let (theta_star, samples, flip_prob, data_seed) = match task.kind() {
            TaskKind::Quadratic => {
                let star = task.theta_star().expect("quadratic task has an optimum");
                let v = star[0];
                if star.iter().any(|x| *x != v) {
                    return Err(unrepresentable("a non-constant optimum"));
                }
                (Some(v), None, None, None)
            }
            TaskKind::Logistic => {
                let spec = task.logistic_spec().expect("logistic task has a spec");
                (None, Some(spec.samples), Some(spec.flip_prob), Some(spec.seed))
            }
        };
        let entry = |spec: &Option<AttackSpec>| -> Result<Option<AttackEntry>> {
            let Some(spec) = spec else { return Ok(None) };
            let mut e = AttackEntry::named(spec.strategy.name());
            e.count = Some(spec.count);
            match spec.strategy {
                Strategy::Reversed { scale } => e.scale = Some(scale.into()),
                Strategy::PartialDrop { fraction } => e.fraction = Some(fraction),
                Strategy::Random { low, high } => {
                    e.low = Some(low);
                    e.high = Some(high);
                }
                Strategy::LieModel { z } => e.z = Some(z.into()),
                Strategy::LieGradient { z_sigma } => e.z_sigma = Some(z_sigma.into()),
                Strategy::Mute => {}
                Strategy::Custom(_) => return Err(unrepresentable("a custom attack")),
            }
            Ok(Some(e))
        };
        let (init, init_std) = match cfg.init {
            InitModel::Constant(v) => (v, None),
            InitModel::Gaussian { std } => (0.0, Some(std)),
        };
        Ok(Self {
            topology: TopologySection {
                n_ps: t.n_ps(),
                f_ps: t.f_ps(),
                q_ps: t.q_ps(),
                n_w: t.n_w().into(),
                f_w: t.f_w().into(),
                q_w: t.q_w().into(),
                mode: t.mode(),
                period: Some(t.period().into()),
                admission: t.admission(),
            },
            task: TaskSection {
                kind: task.kind(),
                dim: task.dim(),
                theta_star,
                noise_sigma: task.noise_sigma().into(),
                batch_ref: task.batch_ref(),
                batch: Some(cfg.batch_size.into()),
                samples,
                flip_prob,
                data_seed,
            },
            schedule: ScheduleSection {
                eta0: cfg.schedule.eta0().into(),
                decay: cfg.schedule.decay(),
            },
            attack: AttackSection {
                servers: entry(&cfg.server_attack)?,
                workers: entry(&cfg.worker_attack)?,
            },
            run: RunSection {
                steps: cfg.steps,
                seed: cfg.seed.into(),
                gar: cfg.gar,
                init,
                init_std,
                fill: cfg.fill,
            },
        })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// A parsed experiment file.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub path: PathBuf,
    pub file: ConfigFile,
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let text = std::fs::read_to_string(&path)?;
        let file = ConfigFile::parse(&text, &path)?;
        Ok(Self { path, file })
    }

    /// Expands sweeps and validates every point.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        self.file
            .expand()
            .into_iter()
            .map(|(labels, file)| {
                Ok(SweepPoint {
                    labels,
                    config: file.to_sim_config(&self.path)?,
                })
            })
            .collect()
    }
}

/// Loads a file describing exactly one run.
pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let exp = Experiment::load(path)?;
    exp.file.to_sim_config(&exp.path)
}

/// Writes `cfg` so that [`load_config`] reproduces it.
pub fn save_config(cfg: &SimConfig, path: impl AsRef<Path>) -> Result<()> {
    let text = ConfigFile::from_sim_config(cfg)?.to_toml()?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, text: &str) -> PathBuf {
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    const MINIMAL: &str = "
[topology]
n_ps = 9
f_ps = 1
q_ps = 4
n_w = 7
f_w = 2
q_w = 5

[task]
dim = 3

[run]
steps = 20
";

    #[test]
    fn minimal_config_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_config(write(&dir, MINIMAL)).unwrap();
        assert_eq!(cfg.steps, 20);
        assert_eq!(cfg.topology.mode(), Mode::Async);
        assert_eq!(cfg.topology.dim(), 3);
        // floor(1 / (3 * 1 * 0.1)) for the unit-curvature quadratic.
        assert_eq!(cfg.topology.period(), 3);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.gar, Gar::Mda);
        assert_eq!(cfg.schedule.eta0(), 0.1);
        assert_eq!(cfg.init, InitModel::Constant(0.0));
        assert!(cfg.server_attack.is_none() && cfg.worker_attack.is_none());
    }

    #[test]
    fn quorum_violation_names_the_bound() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("q_ps = 4", "q_ps = 1");
        let err = load_config(write(&dir, &text)).unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
        assert!(err.to_string().contains("2*f_ps+2"), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("dim = 3", "dim = 3\nwidth = 4");
        match load_config(write(&dir, &text)).unwrap_err() {
            Error::Config { line, message, .. } => {
                assert_eq!(line, 12);
                assert!(message.contains("width"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn misplaced_attack_parameter_reports_section() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MINIMAL}\n[attack.servers]\nstrategy = \"reversed\"\nz = 2.0\n");
        match load_config(write(&dir, &text)).unwrap_err() {
            Error::Config { line, message, .. } => {
                assert_eq!(line, 16);
                assert!(message.contains("`z`"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn lie_model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MINIMAL}\n[attack.servers]\nstrategy = \"lie_model\"\nz = 1.035\n");
        let cfg = load_config(write(&dir, &text)).unwrap();
        let spec = cfg.server_attack.clone().unwrap();
        assert_eq!(spec.strategy, Strategy::LieModel { z: 1.035 });
        assert_eq!(spec.count, 1);

        let saved = dir.path().join("saved.toml");
        save_config(&cfg, &saved).unwrap();
        let again = load_config(&saved).unwrap();
        assert_eq!(again.server_attack, cfg.server_attack);
        assert_eq!(again.topology, cfg.topology);
        assert_eq!(again.schedule, cfg.schedule);
        assert_eq!(
            ConfigFile::from_sim_config(&again).unwrap(),
            ConfigFile::from_sim_config(&cfg).unwrap()
        );
    }

    #[test]
    fn every_strategy_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let base = load_config(write(&dir, MINIMAL)).unwrap();
        let saved = dir.path().join("saved.toml");
        for name in Strategy::NAMES {
            let mut cfg = base.clone();
            cfg.worker_attack = Some(AttackSpec::on_workers(Strategy::from_name(name).unwrap(), 2).unwrap());
            cfg.init = InitModel::Gaussian { std: 0.5 };
            save_config(&cfg, &saved).unwrap();
            let again = load_config(&saved).unwrap();
            assert_eq!(again.worker_attack, cfg.worker_attack, "{name}");
            assert_eq!(again.init, cfg.init);
        }
    }

    #[test]
    fn sweeps_expand_to_cartesian_product() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{}\n[attack.workers]\nstrategy = \"lie_gradient\"\nz_sigma = [0.0, 1.0, 1.5]\n",
            MINIMAL.replace("dim = 3", "dim = 3\nbatch = [16, 64]")
        );
        let exp = Experiment::load(write(&dir, &text)).unwrap();
        let points = exp.points().unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(points[0].label(), "task.batch=16,attack.workers.z_sigma=0");
        assert_eq!(points[5].label(), "task.batch=64,attack.workers.z_sigma=1.5");
        assert_eq!(points[5].config.batch_size, 64);
        assert!(load_config(&exp.path).is_err());
    }

    #[test]
    fn logistic_config() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("dim = 3", "kind = \"logistic\"\ndim = 3\nsamples = 64");
        let cfg = load_config(write(&dir, &text)).unwrap();
        assert_eq!(cfg.task.kind(), TaskKind::Logistic);
        assert_eq!(cfg.task.logistic_spec().unwrap().samples, 64);
        let bad = MINIMAL.replace("dim = 3", "dim = 3\nsamples = 64");
        assert!(load_config(write(&dir, &bad)).is_err());
    }
}

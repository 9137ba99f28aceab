//! Experiment files, CSV output, reference oracles and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod oracle;
pub mod output;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use acceptance::{run_acceptance, run_check, CheckReport, SUITES};
pub use config::{load_config, save_config, ConfigFile, Experiment, OneOrMany, SweepPoint};
pub use output::{emit_csv, read_csv, trace_from_rows, write_csv, CsvRow, CSV_HEADER};

use crate::error::{Error, Result};
use crate::simnet::{run, InitModel, SimConfig};
use crate::task::{measure_variance_norm_ratio, AssumptionReport};
use crate::topology::{Mode, TopologyWarning};
use crate::vector::ParamVector;

/// Command-line overrides applied before sweep expansion.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
}

impl Overrides {
    pub fn apply(&self, exp: &mut Experiment) {
        if let Some(seed) = self.seed {
            exp.file.run.seed = OneOrMany::One(seed);
        }
        if let Some(mode) = self.mode {
            exp.file.topology.mode = mode;
        }
    }
}

/// One finished run of an experiment.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub csv: PathBuf,
    pub final_grad_norm: f64,
    pub steps: u64,
}

/// Runs every sweep point in parallel. A single run is written to
/// `run.csv`; a sweep writes `point-NNN.csv` per point plus `sweep.csv`
/// mapping file names to labels.
pub fn run_experiment(exp: &Experiment, out_dir: &Path) -> Result<Vec<RunSummary>> {
    let points = exp.points()?;
    std::fs::create_dir_all(out_dir)?;
    let single = points.len() == 1;
    let summaries = points
        .par_iter()
        .enumerate()
        .map(|(i, point)| {
            let name = if single {
                "run.csv".to_string()
            } else {
                format!("point-{i:03}.csv")
            };
            let csv = out_dir.join(name);
            log::info!("running {} -> {}", point.label(), csv.display());
            let trace = run(&point.config)?;
            emit_csv(&trace, &csv)?;
            Ok(RunSummary {
                label: point.label(),
                csv,
                final_grad_norm: trace.final_grad_norm(),
                steps: trace.steps.len() as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if !single {
        let mut w = csv::Writer::from_path(out_dir.join("sweep.csv")).map_err(csv_error)?;
        w.write_record(["file", "label", "final_grad_norm"]).map_err(csv_error)?;
        for s in &summaries {
            let file = s.csv.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            w.write_record([file, s.label.clone(), format!("{:.16e}", s.final_grad_norm)])
                .map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(summaries)
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

/// Static checks for one sweep point.
#[derive(Debug, Clone)]
pub struct Validation {
    pub label: String,
    pub warnings: Vec<TopologyWarning>,
    /// `None` when the initial model is already optimal and the ratio is
    /// undefined.
    pub assumption: Option<AssumptionReport>,
}

impl Validation {
    /// Warnings are advisory; only a violated variance bound fails.
    pub fn passed(&self) -> bool {
        self.assumption.as_ref().is_none_or(AssumptionReport::holds_everywhere)
    }
}

/// Trials used when estimating the variance-to-norm ratio.
pub const VALIDATION_TRIALS: usize = 500;

/// Topology warnings and the variance-bound estimate at the initial model of
/// every point. Topology errors surface as `Err` from point expansion.
pub fn validate_experiment(exp: &Experiment) -> Result<Vec<Validation>> {
    exp.points()?
        .into_iter()
        .map(|point| {
            let assumption = check_assumption(&point.config)?;
            Ok(Validation {
                label: point.label(),
                warnings: point.config.topology.warnings(),
                assumption,
            })
        })
        .collect()
}

fn check_assumption(cfg: &SimConfig) -> Result<Option<AssumptionReport>> {
    let dim = cfg.topology.dim();
    // A Gaussian init is checked at its mean.
    let theta0 = match cfg.init {
        InitModel::Constant(c) => ParamVector::filled(dim, c),
        InitModel::Gaussian { .. } => ParamVector::zeros(dim),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let workers = (cfg.topology.n_w(), cfg.topology.f_w());
    match measure_variance_norm_ratio(&cfg.task, &theta0, &[cfg.batch_size], VALIDATION_TRIALS, workers, &mut rng) {
        Ok(report) => Ok(Some(report)),
        Err(Error::UndefinedRatio) => Ok(None),
        Err(e) => Err(e),
    }
}

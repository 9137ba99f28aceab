//! Per-step measurements of a simulation.

use crate::protocol::PhaseTag;
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerMetrics {
    pub server_id: usize,
    pub loss: f64,
    /// Norm of the true gradient at the server's model.
    pub grad_norm: f64,
}

/// State of the correct servers after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub phase: PhaseTag,
    pub servers: Vec<ServerMetrics>,
    /// Coordinate-wise diameter sum over correct server models.
    pub delta: f64,
    /// Largest pairwise l2 distance between correct server models.
    pub max_pairwise: f64,
    /// Pulls rejected by synchronous workers.
    pub filter_rejects: u64,
    /// Models pulled by synchronous workers.
    pub pulls: u64,
    /// Rejected pulls of correct servers' models.
    pub false_negatives: u64,
    /// Accepted pulls of Byzantine servers' models.
    pub false_positives: u64,
    /// Workers that rejected every pull and kept their speculation.
    pub fallbacks: u64,
    /// Byzantine gradients inside MDA's selected subsets, summed over servers.
    pub byzantine_selected: u64,
    /// Correct server models, when recording is enabled.
    pub models: Option<Vec<ParamVector>>,
}

impl StepMetrics {
    pub fn max_grad_norm(&self) -> f64 {
        self.servers.iter().map(|s| s.grad_norm).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTrace {
    pub steps: Vec<StepMetrics>,
}

impl MetricsTrace {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&StepMetrics> {
        self.steps.last()
    }

    /// Largest gradient norm over correct servers after the last step.
    pub fn final_grad_norm(&self) -> f64 {
        self.last().map_or(f64::NAN, StepMetrics::max_grad_norm)
    }

    /// Number of steps until every correct server's gradient norm is below
    /// `threshold`.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<u64> {
        self.steps
            .iter()
            .find(|s| s.max_grad_norm() < threshold)
            .map(|s| s.step + 1)
    }

    /// Mean of the per-step largest gradient norm over the last `fraction` of steps.
    pub fn tail_mean_grad_norm(&self, fraction: f64) -> f64 {
        let n = self.steps.len();
        let tail = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let sum: f64 = self.steps[n - tail..].iter().map(|s| s.max_grad_norm()).sum();
        sum / tail as f64
    }

    pub fn total_pulls(&self) -> u64 {
        self.steps.iter().map(|s| s.pulls).sum()
    }

    pub fn total_rejects(&self) -> u64 {
        self.steps.iter().map(|s| s.filter_rejects).sum()
    }

    pub fn total_false_negatives(&self) -> u64 {
        self.steps.iter().map(|s| s.false_negatives).sum()
    }

    pub fn total_false_positives(&self) -> u64 {
        self.steps.iter().map(|s| s.false_positives).sum()
    }

    pub fn total_fallbacks(&self) -> u64 {
        self.steps.iter().map(|s| s.fallbacks).sum()
    }

    pub fn total_byzantine_selected(&self) -> u64 {
        self.steps.iter().map(|s| s.byzantine_selected).sum()
    }

    /// Rejected correct models over all pulled models.
    pub fn false_negative_ratio(&self) -> f64 {
        ratio(self.total_false_negatives(), self.total_pulls())
    }

    /// Rejected pulls over all pulls.
    pub fn wasted_pull_ratio(&self) -> f64 {
        ratio(self.total_rejects(), self.total_pulls())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

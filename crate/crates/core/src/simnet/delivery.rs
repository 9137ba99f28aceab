//! Which senders fill each receiver's quorum in one exchange.
//!
//! Asynchrony is modelled by sampling quorum composition, not by clocks. For
//! each receiver the sampler draws a set of correct senders uniformly among all
//! admissible sets, then lets the Byzantine senders occupy the remaining slots.
//! Byzantine nodes hold the highest ids of their role.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exchange {
    ServersToWorkers,
    WorkersToServers,
    ServersToServers,
}

/// How many quorum slots the adversary takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    /// The number of correct senders is drawn with the rest, so every
    /// admissible correct subset is equally likely.
    #[default]
    Uniform,
    /// Byzantine senders always take every slot they can.
    Greedy,
}

impl Fill {
    pub fn as_str(self) -> &'static str {
        match self {
            Fill::Uniform => "uniform",
            Fill::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for Fill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Fill::Uniform),
            "greedy" => Ok(Fill::Greedy),
            other => Err(Error::InvalidArgument(format!("unknown fill policy `{other}`"))),
        }
    }
}

/// The quorum-sampling problem for one exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuorumShape {
    pub senders: usize,
    /// Byzantine senders, ids `senders - byzantine .. senders`.
    pub byzantine: usize,
    /// Byzantine senders whose messages exist (zero when they are mute).
    pub active_byzantine: usize,
    pub quorum: usize,
    /// Whether the receiver is itself a correct sender that always counts its
    /// own message.
    pub includes_self: bool,
    pub fill: Fill,
}

impl QuorumShape {
    pub fn for_exchange(
        topology: &Topology,
        exchange: Exchange,
        byzantine: usize,
        silent: bool,
        fill: Fill,
    ) -> Self {
        let (senders, quorum) = match exchange {
            Exchange::ServersToWorkers | Exchange::ServersToServers => {
                (topology.n_ps(), topology.q_ps())
            }
            Exchange::WorkersToServers => (topology.n_w(), topology.q_w()),
        };
        Self {
            senders,
            byzantine,
            active_byzantine: if silent { 0 } else { byzantine },
            quorum,
            includes_self: exchange == Exchange::ServersToServers,
            fill,
        }
    }

    fn correct(&self) -> usize {
        self.senders - self.byzantine
    }

    /// Correct candidates and open slots, excluding the receiver's own message.
    fn free(&self) -> (usize, usize) {
        let own = usize::from(self.includes_self);
        (self.correct() - own, self.quorum - own)
    }

    /// Admissible counts of (other) correct senders in a quorum.
    pub fn correct_counts(&self) -> Result<std::ops::RangeInclusive<usize>> {
        let (candidates, slots) = self.free();
        let lo = slots.saturating_sub(self.active_byzantine);
        let hi = match self.fill {
            Fill::Uniform => slots.min(candidates),
            Fill::Greedy => lo,
        };
        if self.byzantine > self.senders || lo > candidates || self.quorum > self.senders {
            return Err(Error::InvalidArgument(format!(
                "quorum of {} cannot be filled from {} senders ({} Byzantine, {} active)",
                self.quorum, self.senders, self.byzantine, self.active_byzantine
            )));
        }
        Ok(lo..=hi)
    }

    /// Number of distinct correct subsets the sampler can return.
    pub fn configurations(&self) -> Result<u128> {
        let (candidates, _) = self.free();
        Ok(self
            .correct_counts()?
            .map(|k| binomial(candidates as u64, k as u64))
            .sum())
    }

    /// Probability of each admissible configuration for one receiver.
    pub fn rho(&self) -> Result<f64> {
        Ok(1.0 / self.configurations()? as f64)
    }

    /// Sorted sender ids filling `receiver`'s quorum. `receiver` is only
    /// consulted when the receiver's own message counts.
    pub fn sample<R: Rng + ?Sized>(&self, receiver: usize, rng: &mut R) -> Result<Vec<usize>> {
        let counts = self.correct_counts()?;
        let (candidates, slots) = self.free();
        let k = if counts.start() == counts.end() {
            *counts.start()
        } else {
            let total = self.configurations()?;
            let mut draw = rng.random_range(0..total);
            let mut chosen = *counts.end();
            for k in counts {
                let weight = binomial(candidates as u64, k as u64);
                if draw < weight {
                    chosen = k;
                    break;
                }
                draw -= weight;
            }
            chosen
        };

        let pool: Vec<usize> = (0..self.correct())
            .filter(|&id| !(self.includes_self && id == receiver))
            .collect();
        let mut list: Vec<usize> = index::sample(rng, candidates, k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        if self.includes_self {
            list.push(receiver);
        }
        let first_byz = self.correct();
        list.extend(first_byz..first_byz + (slots - k));
        list.sort_unstable();
        Ok(list)
    }
}

/// Per-receiver sender lists of one exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveringConfig {
    pub exchange: Exchange,
    pub lists: Vec<Vec<usize>>,
}

/// Samples one quorum for each of the `receivers` correct receivers
/// (ids `0..receivers`).
pub fn sample_delivering_config<R: Rng + ?Sized>(
    rng: &mut R,
    exchange: Exchange,
    shape: &QuorumShape,
    receivers: usize,
) -> Result<DeliveringConfig> {
    let lists = (0..receivers)
        .map(|r| shape.sample(r, rng))
        .collect::<Result<_>>()?;
    Ok(DeliveringConfig { exchange, lists })
}

/// Probability of any single joint configuration: the product of the
/// per-receiver probabilities.
pub fn joint_rho(shape: &QuorumShape, receivers: usize) -> Result<f64> {
    Ok(shape.rho()?.powi(receivers as i32))
}

pub(crate) fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

//! Byzantine behaviours for servers and workers.
//!
//! The adversary is omniscient: it sees every honest message of the current
//! sub-step before forging its own. Forging is a pure function of those
//! messages and the adversary's own random stream, so honest state is never
//! touched.

use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::aggregation::average;
use crate::error::{Error, Result};
use crate::topology::Topology;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackTarget {
    WorkerGradients,
    ServerModels,
}

impl AttackTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackTarget::WorkerGradients => "worker-gradients",
            AttackTarget::ServerModels => "server-models",
        }
    }
}

/// What a custom attack sees when forging one message.
#[derive(Debug, Clone, Copy)]
pub struct ForgeContext<'a> {
    /// All honest messages of this sub-step.
    pub honest: &'a [ParamVector],
    /// The message this Byzantine node would have sent if it were correct.
    pub reference: &'a ParamVector,
    pub sender: usize,
    pub receiver: usize,
    pub step: u64,
}

impl<'a> ForgeContext<'a> {
    /// Context with a single honest message and no addressing.
    pub fn single(model: &'a ParamVector) -> Self {
        Self {
            honest: std::slice::from_ref(model),
            reference: model,
            sender: 0,
            receiver: 0,
            step: 0,
        }
    }
}

pub type ForgeFn = dyn Fn(&ForgeContext<'_>) -> ParamVector + Send + Sync;

/// A caller-supplied forging function. Since it receives the receiver id it can
/// equivocate, sending different vectors to different nodes.
#[derive(Clone)]
pub struct CustomAttack {
    name: String,
    forge: Arc<ForgeFn>,
}

impl CustomAttack {
    pub fn new(
        name: impl Into<String>,
        forge: impl Fn(&ForgeContext<'_>) -> ParamVector + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            forge: Arc::new(forge),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn forge(&self, ctx: &ForgeContext<'_>) -> ParamVector {
        (self.forge)(ctx)
    }
}

impl fmt::Debug for CustomAttack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomAttack").field("name", &self.name).finish()
    }
}

impl PartialEq for CustomAttack {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.forge, &other.forge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// `-scale * honest`.
    Reversed { scale: f64 },
    /// Zeroes `floor(fraction * d)` uniformly chosen coordinates.
    PartialDrop { fraction: f64 },
    /// I.i.d. uniform coordinates in `[low, high]`.
    Random { low: f64, high: f64 },
    /// `z * honest`, coordinate-wise.
    LieModel { z: f64 },
    /// `mean + z_sigma * std` per coordinate over the honest messages, with the
    /// population standard deviation.
    LieGradient { z_sigma: f64 },
    /// Sends nothing.
    Mute,
    Custom(CustomAttack),
}

impl Strategy {
    pub const NAMES: [&'static str; 6] = [
        "reversed",
        "partial_drop",
        "random",
        "lie_model",
        "lie_gradient",
        "mute",
    ];

    /// The named strategy with its default parameters. Custom attacks cannot be
    /// named.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "reversed" => Strategy::Reversed { scale: 1.0 },
            "partial_drop" => Strategy::PartialDrop { fraction: 0.1 },
            "random" => Strategy::Random {
                low: -1.0,
                high: 1.0,
            },
            "lie_model" => Strategy::LieModel { z: 1.035 },
            "lie_gradient" => Strategy::LieGradient { z_sigma: 1.0 },
            "mute" => Strategy::Mute,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown attack strategy `{other}`"
                )))
            }
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Strategy::Reversed { .. } => "reversed",
            Strategy::PartialDrop { .. } => "partial_drop",
            Strategy::Random { .. } => "random",
            Strategy::LieModel { .. } => "lie_model",
            Strategy::LieGradient { .. } => "lie_gradient",
            Strategy::Mute => "mute",
            Strategy::Custom(c) => c.name(),
        }
    }

    pub fn is_mute(&self) -> bool {
        matches!(self, Strategy::Mute)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            Strategy::Reversed { scale } if !(scale.is_finite() && scale > 0.0) => {
                bad(format!("reversed scale must be positive, got {scale}"))
            }
            Strategy::PartialDrop { fraction } if !(0.0..=1.0).contains(&fraction) => {
                bad(format!("drop fraction must lie in [0, 1], got {fraction}"))
            }
            Strategy::Random { low, high } if !(low.is_finite() && high.is_finite() && low < high) => {
                bad(format!("random range [{low}, {high}] is empty"))
            }
            Strategy::LieModel { z } if !z.is_finite() => bad(format!("z must be finite, got {z}")),
            Strategy::LieGradient { z_sigma } if !z_sigma.is_finite() => {
                bad(format!("z_sigma must be finite, got {z_sigma}"))
            }
            _ => Ok(()),
        }
    }
}

/// One adversary: which messages it forges, how, and how many nodes it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub target: AttackTarget,
    pub strategy: Strategy,
    /// Byzantine nodes controlled, at most the declared `f` of the role.
    pub count: usize,
}

impl AttackSpec {
    pub fn new(target: AttackTarget, strategy: Strategy, count: usize) -> Result<Self> {
        strategy.validate()?;
        Ok(Self {
            target,
            strategy,
            count,
        })
    }

    pub fn on_servers(strategy: Strategy, count: usize) -> Result<Self> {
        Self::new(AttackTarget::ServerModels, strategy, count)
    }

    pub fn on_workers(strategy: Strategy, count: usize) -> Result<Self> {
        Self::new(AttackTarget::WorkerGradients, strategy, count)
    }

    /// Rejects an adversary holding more nodes than the topology tolerates.
    pub fn check(&self, topology: &Topology) -> Result<()> {
        let (role, f) = match self.target {
            AttackTarget::ServerModels => ("servers", topology.f_ps()),
            AttackTarget::WorkerGradients => ("workers", topology.f_w()),
        };
        if self.count > f {
            return Err(Error::InvalidArgument(format!(
                "attack controls {} {role} but the topology tolerates {f}",
                self.count
            )));
        }
        Ok(())
    }
}

/// Forges a model from `ctx.reference`, the model a correct node would send.
/// Returns `None` for a mute node.
pub fn forge_model<R: Rng + ?Sized>(
    strategy: &Strategy,
    ctx: &ForgeContext<'_>,
    rng: &mut R,
) -> Option<ParamVector> {
    let honest = ctx.reference;
    Some(match strategy {
        Strategy::Reversed { scale } => honest.scale(-scale),
        Strategy::PartialDrop { fraction } => {
            let d = honest.dim();
            let drop = ((fraction * d as f64).floor() as usize).min(d);
            let mut out = honest.clone();
            for i in index::sample(rng, d, drop) {
                out.as_mut_slice()[i] = 0.0;
            }
            out
        }
        Strategy::Random { low, high } => ParamVector::from(
            (0..honest.dim())
                .map(|_| rng.random_range(*low..=*high))
                .collect::<Vec<_>>(),
        ),
        Strategy::LieModel { z } => honest.scale(*z),
        Strategy::LieGradient { z_sigma } => lie(ctx.honest, *z_sigma).ok()?,
        Strategy::Mute => return None,
        Strategy::Custom(c) => c.forge(ctx),
    })
}

/// `mean + z_sigma * std` per coordinate, population convention.
fn lie(honest: &[ParamVector], z_sigma: f64) -> Result<ParamVector> {
    let mean = average(honest)?;
    let n = honest.len() as f64;
    let coords = (0..mean.dim())
        .map(|i| {
            let var = honest.iter().map(|g| (g[i] - mean[i]).powi(2)).sum::<f64>() / n;
            mean[i] + z_sigma * var.sqrt()
        })
        .collect::<Vec<_>>();
    Ok(ParamVector::from(coords))
}

/// Forges the gradients that the Byzantine workers `senders` send to
/// `receiver`, one per sender, after observing every honest gradient.
/// Model-style strategies are applied to the honest mean. Mute senders
/// produce nothing.
pub fn forge_gradients<R: Rng + ?Sized>(
    strategy: &Strategy,
    honest_grads: &[ParamVector],
    senders: &[usize],
    receiver: usize,
    step: u64,
    rng: &mut R,
) -> Result<Vec<ParamVector>> {
    if strategy.is_mute() || senders.is_empty() {
        return Ok(Vec::new());
    }
    let mean = average(honest_grads)?;
    if let Strategy::LieGradient { z_sigma } = strategy {
        let forged = lie(honest_grads, *z_sigma)?;
        return Ok(vec![forged; senders.len()]);
    }
    Ok(senders
        .iter()
        .map(|&sender| {
            let ctx = ForgeContext {
                honest: honest_grads,
                reference: &mean,
                sender,
                receiver,
                step,
            };
            forge_model(strategy, &ctx, rng).expect("only mute is silent")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(c: &[f64]) -> ParamVector {
        ParamVector::from(c.to_vec())
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn forge(strategy: &Strategy, model: &ParamVector) -> Option<ParamVector> {
        forge_model(strategy, &ForgeContext::single(model), &mut rng())
    }

    #[test]
    fn model_attacks() {
        let m = pv(&[1.0, -2.0]);
        assert_eq!(forge(&Strategy::Reversed { scale: 1.0 }, &m), Some(pv(&[-1.0, 2.0])));
        let lie = forge(&Strategy::LieModel { z: 1.035 }, &pv(&[2.0, 0.0])).unwrap();
        assert!((lie[0] - 2.07).abs() < 1e-15);
        assert_eq!(lie[1], 0.0);
        assert_eq!(forge(&Strategy::Mute, &m), None);
    }

    #[test]
    fn partial_drop_zeroes_a_tenth() {
        let m = ParamVector::from((1..=10).map(f64::from).collect::<Vec<_>>());
        let out = forge(&Strategy::PartialDrop { fraction: 0.1 }, &m).unwrap();
        let changed: Vec<usize> = (0..10).filter(|&i| out[i] != m[i]).collect();
        assert_eq!(changed.len(), 1);
        assert_eq!(out[changed[0]], 0.0);
    }

    #[test]
    fn random_stays_in_range() {
        let m = ParamVector::zeros(1000);
        let out = forge(&Strategy::Random { low: -1.0, high: 1.0 }, &m).unwrap();
        assert!(out.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert!(out.iter().any(|x| *x != 0.0));
    }

    #[test]
    fn lie_gradient_uses_population_std() {
        let honest = [pv(&[1.0]), pv(&[2.0]), pv(&[3.0])];
        let out = forge_gradients(
            &Strategy::LieGradient { z_sigma: 1.5 },
            &honest,
            &[3, 4],
            0,
            0,
            &mut rng(),
        )
        .unwrap();
        let expected = 2.0 + 1.5 * (2.0f64 / 3.0).sqrt();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|g| (g[0] - expected).abs() < 1e-15));

        let zero = forge_gradients(
            &Strategy::LieGradient { z_sigma: 0.0 },
            &honest,
            &[3],
            0,
            0,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(zero, vec![pv(&[2.0])]);
    }

    #[test]
    fn mute_workers_send_nothing() {
        let honest = [pv(&[1.0])];
        assert!(forge_gradients(&Strategy::Mute, &honest, &[1, 2], 0, 0, &mut rng())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn model_strategies_apply_to_honest_mean() {
        let honest = [pv(&[1.0, 0.0]), pv(&[3.0, 2.0])];
        let out = forge_gradients(
            &Strategy::Reversed { scale: 2.0 },
            &honest,
            &[5],
            0,
            0,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(out, vec![pv(&[-4.0, -2.0])]);
    }

    #[test]
    fn custom_equivocation() {
        let v = pv(&[1.0, 1.0]);
        let attack = CustomAttack::new("split", |ctx: &ForgeContext<'_>| {
            let sign = if ctx.receiver == 0 { 1.0 } else { -1.0 };
            ctx.reference.scale(sign)
        });
        let strategy = Strategy::Custom(attack.clone());
        assert_eq!(strategy.name(), "split");
        assert_eq!(strategy, Strategy::Custom(attack));
        let to0 = forge_gradients(&strategy, std::slice::from_ref(&v), &[9], 0, 0, &mut rng()).unwrap();
        let to1 = forge_gradients(&strategy, std::slice::from_ref(&v), &[9], 1, 0, &mut rng()).unwrap();
        assert_eq!(to0[0], v);
        assert_eq!(to1[0], v.scale(-1.0));
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::on_servers(Strategy::Reversed { scale: -1.0 }, 1).is_err());
        assert!(AttackSpec::on_servers(Strategy::PartialDrop { fraction: 1.5 }, 1).is_err());
        assert!(AttackSpec::on_servers(Strategy::Random { low: 1.0, high: 1.0 }, 1).is_err());
        let topo = crate::topology::RawTopology::new((5, 1, 4), (7, 2, 5), crate::Mode::Async)
            .validate()
            .unwrap();
        assert!(AttackSpec::on_servers(Strategy::Mute, 1).unwrap().check(&topo).is_ok());
        assert!(AttackSpec::on_servers(Strategy::Mute, 2).unwrap().check(&topo).is_err());
        assert!(AttackSpec::on_workers(Strategy::Mute, 2).unwrap().check(&topo).is_ok());
    }

    #[test]
    fn names_round_trip() {
        for name in Strategy::NAMES {
            assert_eq!(Strategy::from_name(name).unwrap().name(), name);
        }
        assert!(Strategy::from_name("nope").is_err());
    }

    proptest! {
        #[test]
        fn reversed_is_an_involution(coords in prop::collection::vec(-1e6f64..1e6, 1..8)) {
            let m = ParamVector::from(coords);
            let s = Strategy::Reversed { scale: 1.0 };
            let twice = forge(&s, &forge(&s, &m).unwrap()).unwrap();
            prop_assert_eq!(twice, m);
        }

        #[test]
        fn forging_leaves_inputs_untouched(coords in prop::collection::vec(-10f64..10.0, 1..8)) {
            let honest = vec![ParamVector::from(coords.clone()), ParamVector::from(coords)];
            let before = honest.clone();
            for name in Strategy::NAMES {
                let s = Strategy::from_name(name).unwrap();
                forge_gradients(&s, &honest, &[2, 3], 0, 0, &mut rng()).unwrap();
            }
            prop_assert_eq!(honest, before);
        }
    }
}

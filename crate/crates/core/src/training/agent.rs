use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::losses::{actor_loss, critic_input, td_loss, td_targets, ActionSpace, ActorLoss, Batch, TdLoss};
use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ForwardPass, Head, Mlp, ReplayBuffer};
use crate::noma::PowerAllocation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Centralized critic, central and local actors, collaborative execution.
    Cdc,
    /// Central actor only; sensors that miss the control packet stay silent.
    Ddpg,
    /// Local actors only with a centralized critic.
    Maddpg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cdc => "cdc",
            Algorithm::Ddpg => "ddpg",
            Algorithm::Maddpg => "maddpg",
        }
    }

    pub fn has_central(self) -> bool {
        matches!(self, Algorithm::Cdc | Algorithm::Ddpg)
    }

    pub fn has_distributed(self) -> bool {
        matches!(self, Algorithm::Cdc | Algorithm::Maddpg)
    }
}

/// Per-sensor actors `κ_n(o_n)` on local observations `[τ_n, g_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedActors {
    pub nets: Vec<Mlp>,
    pub shared: bool,
    pub sensors: usize,
    pub channels: usize,
}

impl DistributedActors {
    pub fn new<R: Rng + ?Sized>(
        space: ActionSpace,
        hidden: &[usize],
        shared: bool,
        final_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let m = space.channels;
        let mut dims = vec![m + 1];
        dims.extend_from_slice(hidden);
        dims.push(m + 1);
        let count = if shared { 1 } else { space.sensors };
        let nets = (0..count)
            .map(|_| Mlp::new(&dims, Head::power(1, m, space.budget), final_scale, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            nets,
            shared,
            sensors: space.sensors,
            channels: m,
        })
    }

    pub fn net(&self, n: usize) -> &Mlp {
        if self.shared {
            &self.nets[0]
        } else {
            &self.nets[n]
        }
    }

    pub fn local_obs<'a>(&self, obs: ArrayView2<'a, f64>, n: usize) -> ArrayView2<'a, f64> {
        let w = self.channels + 1;
        obs.slice_move(s![.., n * w..(n + 1) * w])
    }

    /// Forward pass of every sensor's actor on its slice of the global
    /// observations; returns the cache and the allocation rows.
    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<Vec<(ForwardPass, Array2<f64>)>> {
        (0..self.sensors)
            .map(|n| {
                let net = self.net(n);
                let pass = net.forward(self.local_obs(obs, n))?;
                let out = net.head.apply(pass.raw.view());
                Ok((pass, out))
            })
            .collect()
    }

    /// Joint local allocation, batch × (sensors·channels).
    pub fn predict(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let m = self.channels;
        let mut out = Array2::zeros((obs.nrows(), self.sensors * m));
        for (n, (_, a)) in self.forward(obs)?.into_iter().enumerate() {
            out.slice_mut(s![.., n * m..(n + 1) * m]).assign(&a);
        }
        Ok(out)
    }

    pub fn soft_update_from(&mut self, source: &DistributedActors, tau: f64) {
        for (t, s) in self.nets.iter_mut().zip(&source.nets) {
            t.soft_update_from(s, tau);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.nets.iter().all(Mlp::all_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralSlot {
    pub net: Mlp,
    pub target: Mlp,
    pub opt: Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedSlot {
    pub actors: DistributedActors,
    pub target: DistributedActors,
    pub opts: Vec<Adam>,
}

/// How the critic's next-state action is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bootstrap {
    /// `μ'(O')`
    Central,
    /// `κ'(o')`
    Distributed,
    /// The allocation actually executed next, as stored.
    Stored,
}

/// Networks, optimizers and replay memory of one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub algorithm: Algorithm,
    pub space: ActionSpace,
    pub critic: Mlp,
    pub critic_target: Mlp,
    pub critic_opt: Adam,
    pub central: Option<CentralSlot>,
    pub distributed: Option<DistributedSlot>,
    /// Encoded transitions, see [`crate::training::Transition::encode`].
    pub buffer: ReplayBuffer,
    pub updates: u64,
}

fn adam(cfg: &TrainingConfig, lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    }
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(algorithm: Algorithm, space: ActionSpace, cfg: &TrainingConfig, rng: &mut R) -> Result<Self> {
        let mut critic_dims = vec![space.obs_dim() + space.dim()];
        critic_dims.extend_from_slice(&cfg.critic_hidden);
        critic_dims.push(1);
        let critic = Mlp::new(&critic_dims, Head::Linear { outputs: 1 }, 1.0, rng)?;
        let central = if algorithm.has_central() {
            let mut dims = vec![space.obs_dim()];
            dims.extend_from_slice(&cfg.actor_hidden);
            dims.push(space.sensors * (space.channels + 1));
            let net = Mlp::new(
                &dims,
                Head::power(space.sensors, space.channels, space.budget),
                cfg.final_layer_scale,
                rng,
            )?;
            Some(CentralSlot {
                opt: Adam::new(&net, adam(cfg, cfg.actor_lr)),
                target: net.clone(),
                net,
            })
        } else {
            None
        };
        let distributed = if algorithm.has_distributed() {
            let actors = DistributedActors::new(
                space,
                &cfg.actor_hidden,
                cfg.share_distributed_actors,
                cfg.final_layer_scale,
                rng,
            )?;
            Some(DistributedSlot {
                opts: actors.nets.iter().map(|n| Adam::new(n, adam(cfg, cfg.actor_lr))).collect(),
                target: actors.clone(),
                actors,
            })
        } else {
            None
        };
        Ok(Self {
            algorithm,
            space,
            critic_opt: Adam::new(&critic, adam(cfg, cfg.critic_lr)),
            critic_target: critic.clone(),
            critic,
            central,
            distributed,
            buffer: ReplayBuffer::new(cfg.buffer_capacity, space.record_width()),
            updates: 0,
        })
    }

    pub fn central_net(&self) -> Option<&Mlp> {
        self.central.as_ref().map(|c| &c.net)
    }

    pub fn distributed_actors(&self) -> Option<&DistributedActors> {
        self.distributed.as_ref().map(|d| &d.actors)
    }

    pub fn all_finite(&self) -> bool {
        self.critic.all_finite()
            && self.central.as_ref().is_none_or(|c| c.net.all_finite())
            && self.distributed.as_ref().is_none_or(|d| d.actors.all_finite())
    }

    /// TD loss of the critic on `batch` with the given next-action rule.
    pub fn critic_loss(&self, batch: &Batch, bootstrap: Bootstrap, cfg: &TrainingConfig) -> Result<TdLoss> {
        let use_targets = cfg.target_networks;
        let critic_b = if use_targets { &self.critic_target } else { &self.critic };
        let next_action = match bootstrap {
            Bootstrap::Stored => batch.next_action.clone(),
            Bootstrap::Central => {
                let c = self.central.as_ref().ok_or_else(|| Error::Shape("no central actor".into()))?;
                let net = if use_targets { &c.target } else { &c.net };
                net.predict(batch.next_obs.view())?
            }
            Bootstrap::Distributed => {
                let d = self.distributed.as_ref().ok_or_else(|| Error::Shape("no local actors".into()))?;
                let actors = if use_targets { &d.target } else { &d.actors };
                actors.predict(batch.next_obs.view())?
            }
        };
        let next_x = critic_input(batch.next_obs.view(), next_action.view(), self.space.budget)?;
        let next_q = critic_b.predict(next_x.view())?;
        let targets = td_targets(batch.cost.view(), next_q.column(0), cfg.discount, cfg.cost_scale);
        td_loss(&self.critic, batch.obs.view(), batch.action.view(), targets.view(), self.space.budget)
    }

    /// One critic step on `batch`; returns the TD loss before the step.
    pub fn update_critic(&mut self, batch: &Batch, bootstrap: Bootstrap, cfg: &TrainingConfig) -> Result<f64> {
        let loss = self.critic_loss(batch, bootstrap, cfg)?;
        if !loss.value.is_finite() {
            return Err(Error::NonFinite(format!("TD loss {}", loss.value)));
        }
        self.critic_opt.step(&mut self.critic, &loss.grads)?;
        Ok(loss.value)
    }

    /// Composite actor objective with row selector `beta` (all true for the
    /// central objective, all false for the local one).
    pub fn actor_objective(&self, obs: ArrayView2<f64>, beta: ArrayView2<bool>) -> Result<ActorLoss> {
        let needs_central = beta.iter().any(|&b| b);
        let needs_local = beta.iter().any(|&b| !b);
        actor_loss(
            &self.critic,
            if needs_central { self.central_net() } else { None },
            if needs_local { self.distributed_actors() } else { None },
            obs,
            beta,
            self.space,
        )
    }

    /// One actor step on the composite objective; only actors named by
    /// `train_central` / `train_local` are updated.
    pub fn update_actors(&mut self, obs: ArrayView2<f64>, beta: ArrayView2<bool>, train_central: bool, train_local: bool) -> Result<f64> {
        let loss = self.actor_objective(obs, beta)?;
        if !loss.value.is_finite() {
            return Err(Error::NonFinite(format!("actor objective {}", loss.value)));
        }
        if train_central {
            if let (Some(slot), Some(g)) = (self.central.as_mut(), loss.central.as_ref()) {
                slot.opt.step(&mut slot.net, g)?;
            }
        }
        if train_local {
            if let Some(slot) = self.distributed.as_mut() {
                for ((net, opt), g) in slot.actors.nets.iter_mut().zip(slot.opts.iter_mut()).zip(&loss.distributed) {
                    opt.step(net, g)?;
                }
            }
        }
        Ok(loss.value)
    }

    pub fn soft_update_targets(&mut self, blend: f64, critic: bool, central: bool, local: bool) {
        if critic {
            self.critic_target.soft_update_from(&self.critic, blend);
        }
        if central {
            if let Some(c) = self.central.as_mut() {
                c.target.soft_update_from(&c.net, blend);
            }
        }
        if local {
            if let Some(d) = self.distributed.as_mut() {
                d.target.soft_update_from(&d.actors, blend);
            }
        }
    }
}

/// Noisy or greedy allocation from an actor: Gaussian noise is added to the
/// raw head inputs before the power head, so budgets hold regardless.
pub fn act_central<R: Rng + ?Sized>(net: &Mlp, obs: &[f64], noise: f64, rng: &mut R) -> Result<PowerAllocation> {
    let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| Error::Shape(e.to_string()))?;
    let mut pass = net.forward(x)?;
    perturb(&mut pass.raw, noise, rng)?;
    let out = net.head.apply(pass.raw.view());
    let (groups, channels) = match net.head {
        Head::Power { groups, channels, .. } => (groups, channels),
        Head::Linear { .. } => return Err(Error::Shape("actor needs a power head".into())),
    };
    PowerAllocation::from_flat(groups, channels, out.as_slice().expect("row-major output"))
}

pub fn act_distributed<R: Rng + ?Sized>(
    actors: &DistributedActors,
    obs: &[f64],
    noise: f64,
    rng: &mut R,
) -> Result<PowerAllocation> {
    let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| Error::Shape(e.to_string()))?;
    let m = actors.channels;
    let mut flat = Vec::with_capacity(actors.sensors * m);
    for n in 0..actors.sensors {
        let net = actors.net(n);
        let mut pass = net.forward(actors.local_obs(x, n))?;
        perturb(&mut pass.raw, noise, rng)?;
        flat.extend(net.head.apply(pass.raw.view()).iter().copied());
    }
    PowerAllocation::from_flat(actors.sensors, m, &flat)
}

fn perturb<R: Rng + ?Sized>(raw: &mut Array2<f64>, std: f64, rng: &mut R) -> Result<()> {
    if std > 0.0 {
        let normal = Normal::new(0.0, std).map_err(|e| Error::NonFinite(e.to_string()))?;
        raw.mapv_inplace(|v| v + normal.sample(rng));
    }
    Ok(())
}

/// Which actors produce the executed allocation.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Cdc(&'a Learner),
    Ddpg(&'a Learner),
    Maddpg(&'a Learner),
    /// Central rows from a DDPG learner, local rows from a MADDPG learner.
    Combined { central: &'a Learner, local: &'a Learner },
}

impl<'a> Policy<'a> {
    pub fn central(&self) -> Option<&'a Mlp> {
        match *self {
            Policy::Cdc(l) | Policy::Ddpg(l) => l.central_net(),
            Policy::Combined { central, .. } => central.central_net(),
            Policy::Maddpg(_) => None,
        }
    }

    pub fn distributed(&self) -> Option<&'a DistributedActors> {
        match *self {
            Policy::Cdc(l) | Policy::Maddpg(l) => l.distributed_actors(),
            Policy::Combined { local, .. } => local.distributed_actors(),
            Policy::Ddpg(_) => None,
        }
    }

    pub fn mode(&self) -> crate::env::ControlMode {
        match self {
            Policy::Maddpg(_) => crate::env::ControlMode::DistributedOnly,
            _ => crate::env::ControlMode::Collaborative,
        }
    }
}

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::agent::{act_central, act_distributed, Algorithm, Bootstrap, Learner, Policy};
use super::losses::{ActionSpace, Batch, Transition};
use crate::config::ExperimentConfig;
use crate::env::{episode_seed, Audit, ControlMode, Environment};
use crate::error::{Error, Result};
use crate::noma::PowerAllocation;
use crate::rng::{substream, Substream};
use crate::system::SystemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Attack-free, every sensor follows the central actor; critic and
    /// central actor learn.
    PretrainCentral,
    /// Critic and central actor frozen; local actors learn to please the
    /// critic.
    PretrainDistributed,
    /// Collaborative execution under attack; everything learns.
    Joint,
    Ddpg,
    Maddpg,
}

impl Phase {
    pub fn of(algorithm: Algorithm, episode: usize, cfg: &crate::config::TrainingConfig) -> Self {
        match algorithm {
            Algorithm::Ddpg => Phase::Ddpg,
            Algorithm::Maddpg => Phase::Maddpg,
            Algorithm::Cdc => {
                let a = cfg.pretrain_central_episodes;
                if episode < a {
                    Phase::PretrainCentral
                } else if episode < a + cfg.pretrain_distributed_episodes {
                    Phase::PretrainDistributed
                } else {
                    Phase::Joint
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainCentral => "pretrain_central",
            Phase::PretrainDistributed => "pretrain_distributed",
            Phase::Joint => "joint",
            Phase::Ddpg => "ddpg",
            Phase::Maddpg => "maddpg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub phase: Phase,
    pub mean_cost: f64,
    pub td_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub attack_fraction: f64,
    pub budget_violations: u64,
}

/// One learner bound to one system and seed. The environment, exploration
/// noise and replay sampling of episode `e` are all seeded from
/// `(seed, e)`, so a trainer restored from its learner state at an episode
/// boundary continues exactly as an uninterrupted one.
pub struct Trainer {
    pub config: ExperimentConfig,
    pub spec: Arc<SystemSpec>,
    pub learner: Learner,
    pub seed: u64,
    pub next_episode: usize,
    pub audit: Audit,
    env: Environment,
}

pub fn action_space(spec: &SystemSpec) -> ActionSpace {
    ActionSpace {
        sensors: spec.sensors(),
        channels: spec.channels(),
        budget: spec.config.sensor_budget,
    }
}

impl Trainer {
    pub fn new(config: ExperimentConfig, spec: Arc<SystemSpec>, algorithm: Algorithm, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, Substream::Init);
        let learner = Learner::new(algorithm, action_space(&spec), &config.training, &mut rng)?;
        Self::from_parts(config, spec, learner, seed, 0, Audit::default())
    }

    pub fn from_parts(
        config: ExperimentConfig,
        spec: Arc<SystemSpec>,
        learner: Learner,
        seed: u64,
        next_episode: usize,
        audit: Audit,
    ) -> Result<Self> {
        let env = Environment::new(spec.clone(), episode_seed(seed, next_episode as u64))?;
        Ok(Self {
            config,
            spec,
            learner,
            seed,
            next_episode,
            audit,
            env,
        })
    }

    pub fn total_episodes(&self) -> usize {
        self.config.training.total_episodes()
    }

    pub fn finished(&self) -> bool {
        self.next_episode >= self.total_episodes()
    }

    pub fn run_episode(&mut self) -> Result<EpisodeStats> {
        let episode = self.next_episode;
        self.episode_inner(episode).map_err(|e| match e {
            Error::NonFinite(reason) => Error::TrainingAborted { episode, reason },
            other => other,
        })
    }

    fn episode_inner(&mut self, episode: usize) -> Result<EpisodeStats> {
        let cfg = self.config.training.clone();
        let algorithm = self.learner.algorithm;
        let phase = Phase::of(algorithm, episode, &cfg);
        let space = self.learner.space;
        if phase == Phase::Joint && episode == cfg.pretrain_central_episodes + cfg.pretrain_distributed_episodes {
            // Earlier transitions were collected under a different execution
            // rule and carry a meaningless row selector.
            self.learner.buffer.clear();
        }
        let es = episode_seed(self.seed, episode as u64);
        self.env.reset(es)?;
        self.env.audit = Audit::default();
        let mut explore = substream(es, Substream::Exploration);
        let mut replay = substream(es, Substream::Replay);
        let noise = cfg.exploration_std(episode);
        let zero = PowerAllocation::zeros(space.sensors, space.channels);

        let mut pending: Option<Transition> = None;
        let mut cost_sum = 0.0;
        let mut attacked = 0usize;
        let (mut td_sum, mut td_n, mut actor_sum, mut actor_n) = (0.0, 0usize, 0.0, 0usize);
        for _ in 0..cfg.steps_per_episode {
            let obs = self.env.observation();
            let central = match phase {
                Phase::PretrainCentral | Phase::Joint | Phase::Ddpg => {
                    act_central(&self.learner.central.as_ref().expect("central actor").net, &obs, noise, &mut explore)?
                }
                _ => zero.clone(),
            };
            let local = match phase {
                Phase::PretrainDistributed | Phase::Joint | Phase::Maddpg => act_distributed(
                    &self.learner.distributed.as_ref().expect("local actors").actors,
                    &obs,
                    noise,
                    &mut explore,
                )?,
                _ => zero.clone(),
            };
            let mode = match phase {
                Phase::PretrainCentral => ControlMode::CentralOnly,
                Phase::PretrainDistributed | Phase::Maddpg => ControlMode::DistributedOnly,
                Phase::Joint | Phase::Ddpg => ControlMode::Collaborative,
            };
            let rec = self.env.step(mode, &central, &local)?;
            attacked += rec.attacking as usize;
            cost_sum += rec.cost;
            let executed = rec.executed.flat();
            if let Some(mut p) = pending.take() {
                p.next_action = executed.clone();
                self.learner.buffer.push(&p.encode(space)?)?;
            }
            pending = Some(Transition {
                obs,
                action: executed,
                beta: rec.beta,
                cost: rec.cost,
                next_obs: self.env.observation(),
                next_action: Vec::new(),
            });

            if self.learner.buffer.len() < cfg.batch_size {
                continue;
            }
            for _ in 0..cfg.updates_per_step {
                let batch = Batch::from_records(&self.learner.buffer.sample(cfg.batch_size, &mut replay)?, space)?;
                let rows = batch.len();
                let all = |v: bool| Array2::from_elem((rows, space.sensors), v);
                let (td, actor) = match phase {
                    Phase::PretrainCentral | Phase::Ddpg => {
                        let td = self.learner.update_critic(&batch, Bootstrap::Central, &cfg)?;
                        let j = self.learner.update_actors(batch.obs.view(), all(true).view(), true, false)?;
                        (Some(td), j)
                    }
                    Phase::PretrainDistributed => {
                        let j = self.learner.update_actors(batch.obs.view(), all(false).view(), false, true)?;
                        (None, j)
                    }
                    Phase::Joint => {
                        let td = self.learner.update_critic(&batch, Bootstrap::Stored, &cfg)?;
                        let j = self.learner.update_actors(batch.obs.view(), batch.beta.view(), true, true)?;
                        (Some(td), j)
                    }
                    Phase::Maddpg => {
                        let td = self.learner.update_critic(&batch, Bootstrap::Distributed, &cfg)?;
                        let j = self.learner.update_actors(batch.obs.view(), all(false).view(), false, true)?;
                        (Some(td), j)
                    }
                };
                if cfg.target_networks {
                    let critic = phase != Phase::PretrainDistributed;
                    let central = matches!(phase, Phase::PretrainCentral | Phase::Joint | Phase::Ddpg);
                    let local = matches!(phase, Phase::PretrainDistributed | Phase::Joint | Phase::Maddpg);
                    self.learner.soft_update_targets(cfg.target_blend, critic, central, local);
                }
                if let Some(td) = td {
                    td_sum += td;
                    td_n += 1;
                }
                actor_sum += actor;
                actor_n += 1;
                self.learner.updates += 1;
            }
        }
        if !self.learner.all_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        let ep_audit = self.env.audit;
        self.audit.steps += ep_audit.steps;
        self.audit.budget_violations += ep_audit.budget_violations;
        self.audit.max_covariance_rel_error = self.audit.max_covariance_rel_error.max(ep_audit.max_covariance_rel_error);
        self.next_episode += 1;
        let steps = cfg.steps_per_episode as f64;
        Ok(EpisodeStats {
            episode,
            phase,
            mean_cost: cost_sum / steps,
            td_loss: (td_n > 0).then(|| td_sum / td_n as f64),
            actor_loss: (actor_n > 0).then(|| actor_sum / actor_n as f64),
            attack_fraction: attacked as f64 / steps,
            budget_violations: ep_audit.budget_violations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub mean_cost: f64,
    /// Time-averaged capped trace per sensor.
    pub per_sensor: Vec<f64>,
    pub attack_fraction: f64,
    /// Fraction of sensor-slots whose control packet arrived.
    pub delivery_rate: f64,
    pub budget_violations: u64,
}

/// Noise-free rollout of `policy` for `steps` slots from a reset with `seed`.
pub fn greedy_episode(env: &mut Environment, policy: Policy, steps: usize, seed: u64) -> Result<EvalEpisode> {
    env.reset(seed)?;
    env.audit = Audit::default();
    let (n, m) = (env.spec().sensors(), env.spec().channels());
    let zero = PowerAllocation::zeros(n, m);
    let mut unused = substream(seed, Substream::Exploration);
    let mut per_sensor = vec![0.0; n];
    let (mut cost, mut attacked, mut delivered) = (0.0, 0usize, 0usize);
    for _ in 0..steps {
        let obs = env.observation();
        let central = match policy.central() {
            Some(net) => act_central(net, &obs, 0.0, &mut unused)?,
            None => zero.clone(),
        };
        let local = match policy.distributed() {
            Some(actors) => act_distributed(actors, &obs, 0.0, &mut unused)?,
            None => zero.clone(),
        };
        let rec = env.step(policy.mode(), &central, &local)?;
        cost += rec.cost;
        attacked += rec.attacking as usize;
        delivered += rec.beta.iter().filter(|&&b| b).count();
        for (i, &tau) in env.taus().iter().enumerate() {
            per_sensor[i] += env.tables()[i].cost(tau);
        }
    }
    let s = steps as f64;
    Ok(EvalEpisode {
        mean_cost: cost / s,
        per_sensor: per_sensor.into_iter().map(|v| v / s).collect(),
        attack_fraction: attacked as f64 / s,
        delivery_rate: delivered as f64 / (s * n as f64),
        budget_violations: env.audit.budget_violations,
    })
}

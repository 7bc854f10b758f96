use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::runner::AgentKind;
use crate::env::{episode_seed, Environment};
use crate::error::{Error, Result};
use crate::system::SystemSpec;
use crate::training::{greedy_episode, Learner, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub agent: AgentKind,
    pub system_id: u64,
    pub seed: u64,
    pub episodes: usize,
    /// Mean over episodes of the per-slot estimation MSE.
    pub mean_cost: f64,
    /// Sample standard deviation of the per-episode MSE.
    pub std_cost: f64,
    pub per_episode: Vec<f64>,
    pub per_sensor: Vec<f64>,
    pub attack_fraction: f64,
    pub delivery_rate: f64,
    pub budget_violations: u64,
}

/// The deployed policy of a run; `learners` are in run order (`[ddpg,
/// maddpg]` for the combined benchmark).
pub fn policy_of(agent: AgentKind, learners: &[Learner]) -> Result<Policy<'_>> {
    let need = if agent == AgentKind::Combined { 2 } else { 1 };
    if learners.len() != need {
        return Err(Error::Checkpoint(format!("{agent} needs {need} learners, found {}", learners.len())));
    }
    Ok(match agent {
        AgentKind::Cdc => Policy::Cdc(&learners[0]),
        AgentKind::Ddpg => Policy::Ddpg(&learners[0]),
        AgentKind::Maddpg => Policy::Maddpg(&learners[0]),
        AgentKind::Combined => Policy::Combined {
            central: &learners[0],
            local: &learners[1],
        },
    })
}

pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Greedy episodes seeded from `eval_seed`, so every agent on a system
/// faces the same channel, attacker and decoding draws.
pub fn evaluate(
    spec: Arc<SystemSpec>,
    agent: AgentKind,
    learners: &[Learner],
    seed: u64,
    steps: usize,
    episodes: usize,
    eval_seed: u64,
) -> Result<EvalSummary> {
    let policy = policy_of(agent, learners)?;
    let n = spec.sensors();
    let system_id = spec.system_id;
    let mut env = Environment::new(spec, episode_seed(eval_seed, 0))?;
    let mut per_episode = Vec::with_capacity(episodes);
    let mut per_sensor = vec![0.0; n];
    let (mut attack, mut delivery, mut violations) = (0.0, 0.0, 0);
    for e in 0..episodes {
        let r = greedy_episode(&mut env, policy, steps, episode_seed(eval_seed, e as u64))?;
        per_episode.push(r.mean_cost);
        for (acc, v) in per_sensor.iter_mut().zip(&r.per_sensor) {
            *acc += v / episodes as f64;
        }
        attack += r.attack_fraction / episodes as f64;
        delivery += r.delivery_rate / episodes as f64;
        violations += r.budget_violations;
    }
    Ok(EvalSummary {
        agent,
        system_id,
        seed,
        episodes,
        mean_cost: per_episode.iter().sum::<f64>() / episodes as f64,
        std_cost: sample_std(&per_episode),
        per_episode,
        per_sensor,
        attack_fraction: attack,
        delivery_rate: delivery,
        budget_violations: violations,
    })
}

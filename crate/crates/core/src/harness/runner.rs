//! One training run: a learner (or the two learners behind the combined
//! benchmark) on one system and seed, with per-episode metrics, periodic
//! checkpoints and resumption.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{describe_networks, read_checkpoint, write_checkpoint, CheckpointHeader, CheckpointPayload};
use super::convergence::{detect_convergence, Convergence};
use super::evaluate::{evaluate, EvalSummary};
use crate::config::{save_config, ExperimentConfig};
use crate::env::{episode_seed, Audit, Environment};
use crate::error::{Error, Result};
use crate::system::{generate_system, SystemManifest, SystemSpec};
use crate::training::{greedy_episode, Algorithm, EpisodeStats, Learner, Phase, Policy, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Cdc,
    Ddpg,
    Maddpg,
    /// DDPG rows where the control packet arrived, MADDPG rows elsewhere.
    Combined,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Cdc, AgentKind::Ddpg, AgentKind::Maddpg, AgentKind::Combined];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Cdc => "cdc",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Maddpg => "maddpg",
            AgentKind::Combined => "combined",
        }
    }

    pub fn is_benchmark(self) -> bool {
        self != AgentKind::Cdc
    }

    /// Learners trained by a run of this agent, in checkpoint order.
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AgentKind::Cdc => vec![Algorithm::Cdc],
            AgentKind::Ddpg => vec![Algorithm::Ddpg],
            AgentKind::Maddpg => vec![Algorithm::Maddpg],
            AgentKind::Combined => vec![Algorithm::Ddpg, Algorithm::Maddpg],
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "agent",
                name: s.into(),
            })
    }
}

/// One row of `metrics.csv`. Episodes are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub agent: AgentKind,
    pub system_id: u64,
    pub seed: u64,
    pub mean_cost: f64,
    pub td_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub nstd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMarker {
    pub phase: Phase,
    /// 1-based, inclusive.
    pub first_episode: usize,
    pub last_episode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub agent: AgentKind,
    pub system_id: u64,
    pub seed: u64,
    pub system_digest: String,
    pub total_episodes: usize,
    pub completed_episodes: usize,
    pub phases: Vec<PhaseMarker>,
    /// First episode of the curve the convergence test looks at.
    pub convergence_from: usize,
    pub convergence_episode: Option<usize>,
    pub budget_violations: u64,
    pub slots: u64,
    pub max_covariance_rel_error: f64,
    pub finished: bool,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Continue from `checkpoint.bin` when present.
    pub resume: bool,
    /// Stop after this many episodes in the current session.
    pub episode_limit: Option<usize>,
    pub evaluate: bool,
    pub verbose: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            resume: true,
            episode_limit: None,
            evaluate: true,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub records: Vec<EpisodeRecord>,
    pub convergence: Convergence,
    /// Per-learner statistics; for the combined benchmark these are the
    /// DDPG and MADDPG curves that its mixture is built from.
    pub stats: Vec<Vec<EpisodeStats>>,
    pub learners: Vec<Learner>,
    pub eval: Option<EvalSummary>,
}

pub fn run_dir(out: &Path, agent: AgentKind, system_id: u64, seed: u64) -> PathBuf {
    out.join(format!("{agent}-sys{system_id}-seed{seed}"))
}

/// 0-based first episode of the stage whose curve decides convergence: the
/// collaborative stage for CDC, the whole run otherwise.
pub fn convergence_offset(agent: AgentKind, config: &ExperimentConfig) -> usize {
    match agent {
        AgentKind::Cdc => config.training.pretrain_central_episodes + config.training.pretrain_distributed_episodes,
        _ => 0,
    }
}

fn phase_markers(agent: AgentKind, config: &ExperimentConfig) -> Vec<PhaseMarker> {
    let total = config.training.total_episodes();
    let alg = agent.algorithms()[0];
    let mut out: Vec<PhaseMarker> = Vec::new();
    for e in 0..total {
        let p = Phase::of(alg, e, &config.training);
        match out.last_mut() {
            Some(m) if m.phase == p => m.last_episode = e + 1,
            _ => out.push(PhaseMarker {
                phase: p,
                first_episode: e + 1,
                last_episode: e + 1,
            }),
        }
    }
    out
}

/// Builds the CSV rows and convergence verdict for a cost curve.
pub fn summarize_series(
    agent: AgentKind,
    config: &ExperimentConfig,
    system_id: u64,
    seed: u64,
    series: &[f64],
    stats: &[Vec<EpisodeStats>],
) -> (Vec<EpisodeRecord>, Convergence) {
    let offset = convergence_offset(agent, config).min(series.len());
    let exp = &config.experiment;
    let stage = detect_convergence(&series[offset..], exp.convergence_window, exp.convergence_threshold);
    let mut nstd = vec![None; offset];
    nstd.extend(stage.nstd.iter().copied());
    let convergence = Convergence {
        episode: stage.episode.map(|e| e + offset),
        nstd: nstd.clone(),
    };
    let single = agent != AgentKind::Combined;
    let records = series
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let s = if single { stats.first().and_then(|v| v.get(i)) } else { None };
            EpisodeRecord {
                episode: i + 1,
                agent,
                system_id,
                seed,
                mean_cost: c,
                td_loss: s.and_then(|s| s.td_loss),
                actor_loss: s.and_then(|s| s.actor_loss),
                nstd: nstd[i],
            }
        })
        .collect();
    (records, convergence)
}

pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(["episode", "agent", "system_id", "seed", "mean_cost", "td_loss", "actor_loss", "nstd"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

struct RunState {
    trainers: Vec<Trainer>,
    stats: Vec<Vec<EpisodeStats>>,
    series: Vec<f64>,
}

fn restore(
    path: &Path,
    config: &ExperimentConfig,
    spec: &Arc<SystemSpec>,
    agent: AgentKind,
    system_id: u64,
    seed: u64,
) -> Result<RunState> {
    let (header, payload) = read_checkpoint(path)?;
    if header.agent != agent || header.system_id != system_id || header.seed != seed {
        return Err(Error::Checkpoint(format!(
            "{} belongs to {}/system {}/seed {}",
            path.display(),
            header.agent,
            header.system_id,
            header.seed
        )));
    }
    if header.config != *config {
        return Err(Error::Checkpoint("checkpoint was written with a different configuration".into()));
    }
    if header.system_digest != spec.digest()? {
        return Err(Error::Checkpoint("system digest differs from the regenerated system".into()));
    }
    let trainers = payload
        .learners
        .into_iter()
        .zip(payload.audits)
        .map(|(l, a)| Trainer::from_parts(config.clone(), spec.clone(), l, seed, header.next_episode, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunState {
        trainers,
        stats: payload.stats,
        series: payload.series,
    })
}

fn save(
    path: &Path,
    config: &ExperimentConfig,
    spec: &SystemSpec,
    agent: AgentKind,
    seed: u64,
    state: &RunState,
) -> Result<()> {
    let learners: Vec<Learner> = state.trainers.iter().map(|t| t.learner.clone()).collect();
    let header = CheckpointHeader {
        agent,
        system_id: spec.system_id,
        seed,
        next_episode: state.series.len(),
        total_episodes: config.training.total_episodes(),
        system_digest: spec.digest()?,
        config: config.clone(),
        networks: describe_networks(&learners),
    };
    let payload = CheckpointPayload {
        learners,
        audits: state.trainers.iter().map(|t| t.audit).collect(),
        stats: state.stats.clone(),
        series: state.series.clone(),
    };
    write_checkpoint(path, &header, &payload)
}

/// Trains `agent` on system `system_id` with run seed `seed`. Output goes
/// to `run_dir(opts.out_dir, …)`: the config, the system manifest,
/// `metrics.csv`, `checkpoint.bin`, `run.json` and, once training is
/// complete, `eval.json`.
pub fn run_training(
    config: &ExperimentConfig,
    agent: AgentKind,
    system_id: u64,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    let dir = run_dir(&opts.out_dir, agent, system_id, seed);
    std::fs::create_dir_all(&dir)?;
    let spec = Arc::new(generate_system(&config.system, system_id)?);
    save_config(config, &dir.join("config.toml"))?;
    SystemManifest::new(&spec)?.write(&dir.join("system.json"))?;
    let ckpt = dir.join("checkpoint.bin");

    let mut state = if opts.resume && ckpt.exists() {
        restore(&ckpt, config, &spec, agent, system_id, seed)?
    } else {
        let trainers = agent
            .algorithms()
            .into_iter()
            .map(|a| Trainer::new(config.clone(), spec.clone(), a, seed))
            .collect::<Result<Vec<_>>>()?;
        RunState {
            stats: vec![Vec::new(); trainers.len()],
            trainers,
            series: Vec::new(),
        }
    };

    let total = config.training.total_episodes();
    let steps = config.training.steps_per_episode;
    let mut mixture_env = (agent == AgentKind::Combined)
        .then(|| Environment::new(spec.clone(), 0))
        .transpose()?;
    let mut session = 0usize;
    while state.series.len() < total && opts.episode_limit.is_none_or(|l| session < l) {
        let episode = state.series.len();
        for (t, s) in state.trainers.iter_mut().zip(state.stats.iter_mut()) {
            s.push(t.run_episode()?);
        }
        let cost = match mixture_env.as_mut() {
            Some(env) => {
                let policy = Policy::Combined {
                    central: &state.trainers[0].learner,
                    local: &state.trainers[1].learner,
                };
                greedy_episode(env, policy, steps, episode_seed(seed, episode as u64))?.mean_cost
            }
            None => state.stats[0][episode].mean_cost,
        };
        state.series.push(cost);
        session += 1;
        if opts.verbose {
            eprintln!("{agent} sys{system_id} seed{seed} episode {}/{total}: cost {cost:.4}", episode + 1);
        }
        let every = config.experiment.checkpoint_every;
        if every > 0 && state.series.len() % every == 0 && state.series.len() < total {
            save(&ckpt, config, &spec, agent, seed, &state)?;
        }
    }
    let finished = state.series.len() >= total;
    save(&ckpt, config, &spec, agent, seed, &state)?;

    let (records, convergence) = summarize_series(agent, config, system_id, seed, &state.series, &state.stats);
    write_records(&dir.join("metrics.csv"), &records)?;
    if agent == AgentKind::Combined {
        let mut parts = Vec::new();
        for (alg, stats) in [AgentKind::Ddpg, AgentKind::Maddpg].into_iter().zip(&state.stats) {
            let series: Vec<f64> = stats.iter().map(|s| s.mean_cost).collect();
            parts.extend(summarize_series(alg, config, system_id, seed, &series, std::slice::from_ref(stats)).0);
        }
        write_records(&dir.join("components.csv"), &parts)?;
    }

    let audit = state.trainers.iter().fold(Audit::default(), |mut acc, t| {
        acc.steps += t.audit.steps;
        acc.budget_violations += t.audit.budget_violations;
        acc.max_covariance_rel_error = acc.max_covariance_rel_error.max(t.audit.max_covariance_rel_error);
        acc
    });
    let learners: Vec<Learner> = state.trainers.into_iter().map(|t| t.learner).collect();
    let eval = if finished && opts.evaluate {
        let e = evaluate(
            spec.clone(),
            agent,
            &learners,
            seed,
            steps,
            config.experiment.eval_episodes,
            config.experiment.eval_seed,
        )?;
        std::fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&e)?)?;
        Some(e)
    } else {
        None
    };
    let manifest = RunManifest {
        agent,
        system_id,
        seed,
        system_digest: spec.digest()?,
        total_episodes: total,
        completed_episodes: state.series.len(),
        phases: phase_markers(agent, config),
        convergence_from: convergence_offset(agent, config) + 1,
        convergence_episode: convergence.episode,
        budget_violations: audit.budget_violations,
        slots: audit.steps,
        max_covariance_rel_error: audit.max_covariance_rel_error,
        finished,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        dir,
        manifest,
        records,
        convergence,
        stats: state.stats,
        learners,
        eval,
    })
}

/// Re-evaluates a saved run with its stored configuration.
pub fn evaluate_checkpoint(path: &Path, episodes: Option<usize>) -> Result<EvalSummary> {
    let (header, payload) = read_checkpoint(path)?;
    let spec = Arc::new(generate_system(&header.config.system, header.system_id)?);
    if spec.digest()? != header.system_digest {
        return Err(Error::Checkpoint("system digest differs from the regenerated system".into()));
    }
    let exp = &header.config.experiment;
    evaluate(
        spec,
        header.agent,
        &payload.learners,
        header.seed,
        header.config.training.steps_per_episode,
        episodes.unwrap_or(exp.eval_episodes),
        exp.eval_seed,
    )
}

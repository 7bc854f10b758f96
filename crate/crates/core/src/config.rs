//! Experiment configuration as TOML. Defaults reproduce the small-scale
//! system with the standard simulation parameters; a top-level
//! `preset = "sss" | "lss" | "mini"` key selects a different base that the
//! rest of the file overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::AttackerProfile;
use crate::channel::GainAlphabet;
use crate::error::{Error, Result};
use crate::estimation::{DEFAULT_COST_CAP, DEFAULT_TAU_MAX};
use crate::noma::LinkParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Independent ψ-state chain per subchannel.
    Factorized,
    /// One ψ^M-state chain per sensor (small M only).
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub sensors: usize,
    pub channels: usize,
    /// Number of quantized gain levels ψ.
    pub gain_levels_count: usize,
    pub gain_min_exp: f64,
    pub gain_max_exp: f64,
    /// Explicit gain levels; overrides the log-spaced alphabet when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_levels: Option<Vec<f64>>,
    pub channel_mode: ChannelMode,
    pub state_dim: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub blocklength: u32,
    pub rate: f64,
    pub control_blocklength: u32,
    pub control_rate: f64,
    pub noise: f64,
    pub sensor_budget: f64,
    pub server_budget: f64,
    pub attacker_budget: f64,
    pub attacker: AttackerProfile,
    pub tau_max: u32,
    pub cost_cap: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            sensors: 6,
            channels: 3,
            gain_levels_count: 8,
            gain_min_exp: -4.0,
            gain_max_exp: -0.5,
            gain_levels: None,
            channel_mode: ChannelMode::Factorized,
            state_dim: 2,
            radius_min: 1.0,
            radius_max: 1.3,
            blocklength: 200,
            rate: 2.0,
            control_blocklength: 200,
            control_rate: 2.0,
            noise: 0.01,
            sensor_budget: 20.0,
            server_budget: 200.0,
            attacker_budget: 1000.0,
            attacker: AttackerProfile::Persistent,
            tau_max: DEFAULT_TAU_MAX,
            cost_cap: DEFAULT_COST_CAP,
        }
    }
}

impl SystemConfig {
    pub fn alphabet(&self) -> Result<GainAlphabet> {
        match &self.gain_levels {
            Some(levels) => GainAlphabet::new(levels.clone()),
            None => Ok(GainAlphabet::log_spaced(
                self.gain_levels_count,
                self.gain_min_exp,
                self.gain_max_exp,
            )),
        }
    }

    pub fn data_link(&self) -> LinkParams {
        LinkParams {
            blocklength: self.blocklength,
            rate: self.rate,
            noise: self.noise,
        }
    }

    pub fn control_link(&self) -> LinkParams {
        LinkParams {
            blocklength: self.control_blocklength,
            rate: self.control_rate,
            noise: self.noise,
        }
    }

    pub fn observation_dim(&self) -> usize {
        self.sensors * (self.channels + 1)
    }

    pub fn action_dim(&self) -> usize {
        self.sensors * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub discount: f64,
    pub pretrain_central_episodes: usize,
    pub pretrain_distributed_episodes: usize,
    pub joint_episodes: usize,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub target_networks: bool,
    pub target_blend: f64,
    pub noise_start: f64,
    pub noise_end: f64,
    /// Multiplies every cost before it enters a loss.
    pub cost_scale: f64,
    pub final_layer_scale: f64,
    pub share_distributed_actors: bool,
    pub updates_per_step: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            discount: 0.95,
            pretrain_central_episodes: 250,
            pretrain_distributed_episodes: 250,
            joint_episodes: 300,
            steps_per_episode: 500,
            batch_size: 128,
            buffer_capacity: 100_000,
            critic_hidden: vec![1024, 1024],
            actor_hidden: vec![256, 256],
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            target_networks: true,
            target_blend: 0.005,
            noise_start: 0.2,
            noise_end: 0.02,
            cost_scale: 1.0,
            final_layer_scale: 1e-3,
            share_distributed_actors: false,
            updates_per_step: 1,
        }
    }
}

impl TrainingConfig {
    /// Episode budget of one CDC run; the benchmarks get the same budget.
    pub fn total_episodes(&self) -> usize {
        self.pretrain_central_episodes + self.pretrain_distributed_episodes + self.joint_episodes
    }

    /// Linear decay from `noise_start` at the first episode to `noise_end`
    /// at the last.
    pub fn exploration_std(&self, episode: usize) -> f64 {
        let total = self.total_episodes();
        if total <= 1 {
            return self.noise_start;
        }
        let frac = (episode.min(total - 1)) as f64 / (total - 1) as f64;
        self.noise_start + (self.noise_end - self.noise_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub systems: Vec<u64>,
    pub seeds: Vec<u64>,
    /// Run system `systems[i]` with seed `seeds[i]` instead of every pair.
    pub pair_seeds: bool,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub output_dir: String,
    /// Episodes between checkpoints; 0 disables checkpointing.
    pub checkpoint_every: usize,
}

impl HarnessConfig {
    /// The (system, seed) pairs an experiment runs.
    pub fn jobs(&self) -> Vec<(u64, u64)> {
        if self.pair_seeds {
            self.systems.iter().copied().zip(self.seeds.iter().copied()).collect()
        } else {
            self.systems
                .iter()
                .flat_map(|&s| self.seeds.iter().map(move |&seed| (s, seed)))
                .collect()
        }
    }
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            systems: vec![0],
            seeds: vec![0],
            pair_seeds: false,
            eval_episodes: 20,
            eval_seed: 1_000_003,
            convergence_window: 10,
            convergence_threshold: 0.05,
            output_dir: "runs".into(),
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub training: TrainingConfig,
    pub experiment: HarnessConfig,
}

impl ExperimentConfig {
    /// Small-scale system, N = 6 and M = 3 (the defaults).
    pub fn sss() -> Self {
        Self::default()
    }

    /// Large-scale system, N = 20 and M = 10, 800 episodes.
    pub fn lss() -> Self {
        let mut c = Self::default();
        c.system.sensors = 20;
        c.system.channels = 10;
        c
    }

    /// Desk-scale setting: N = 4, M = 2, ψ = 4, persistent attacker and 300
    /// episodes with networks small enough for a single CPU core.
    pub fn mini() -> Self {
        let mut c = Self::default();
        c.system.sensors = 4;
        c.system.channels = 2;
        c.system.gain_levels_count = 4;
        c.system.attacker = AttackerProfile::Persistent;
        let t = &mut c.training;
        t.pretrain_central_episodes = 100;
        t.pretrain_distributed_episodes = 50;
        t.joint_episodes = 150;
        t.steps_per_episode = 100;
        t.batch_size = 64;
        t.buffer_capacity = 20_000;
        t.critic_hidden = vec![128, 128];
        t.actor_hidden = vec![64, 64];
        c.experiment.systems = vec![0, 1, 2, 3, 4];
        c.experiment.seeds = vec![0, 1, 2, 3, 4];
        c.experiment.pair_seeds = true;
        c.experiment.checkpoint_every = 0;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sss" | "default" => Ok(Self::sss()),
            "lss" => Ok(Self::lss()),
            "mini" => Ok(Self::mini()),
            _ => Err(Error::Unknown {
                kind: "preset",
                name: name.into(),
            }),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<toml>", e.to_string()))?;
        let base = match table.remove("preset") {
            Some(toml::Value::String(name)) => Self::preset(&name)?,
            Some(_) => return Err(Error::config("preset", "must be a string")),
            None => Self::default(),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::config("<preset>", e.to_string()))?;
        merge(&mut merged, table);
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("<toml>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialize>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let t = &self.training;
        let e = &self.experiment;
        let positive = [
            ("system.sensor_budget", s.sensor_budget),
            ("system.server_budget", s.server_budget),
            ("system.attacker_budget", s.attacker_budget),
            ("system.noise", s.noise),
            ("system.rate", s.rate),
            ("system.control_rate", s.control_rate),
            ("system.cost_cap", s.cost_cap),
            ("training.critic_lr", t.critic_lr),
            ("training.actor_lr", t.actor_lr),
            ("training.cost_scale", t.cost_scale),
            ("training.adam_eps", t.adam_eps),
        ];
        for (path, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, format!("must be positive, got {v}")));
            }
        }
        let counts = [
            ("system.sensors", s.sensors),
            ("system.channels", s.channels),
            ("system.gain_levels_count", s.gain_levels_count),
            ("system.state_dim", s.state_dim),
            ("system.blocklength", s.blocklength as usize),
            ("system.control_blocklength", s.control_blocklength as usize),
            ("system.tau_max", s.tau_max as usize),
            ("training.steps_per_episode", t.steps_per_episode),
            ("training.batch_size", t.batch_size),
            ("training.buffer_capacity", t.buffer_capacity),
            ("training.updates_per_step", t.updates_per_step),
            ("experiment.eval_episodes", e.eval_episodes),
        ];
        for (path, v) in counts {
            if v == 0 {
                return Err(Error::config(path, "must be at least 1"));
            }
        }
        if t.batch_size > t.buffer_capacity {
            return Err(Error::config("training.batch_size", "exceeds buffer_capacity"));
        }
        if !(s.radius_min >= 0.0 && s.radius_max > s.radius_min) {
            return Err(Error::config("system.radius_max", "radius range must be non-empty"));
        }
        if !(0.0..1.0).contains(&t.discount) {
            return Err(Error::config("training.discount", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&t.target_blend) {
            return Err(Error::config("training.target_blend", "must lie in [0, 1]"));
        }
        if t.noise_start < 0.0 || t.noise_end < 0.0 {
            return Err(Error::config("training.noise_start", "exploration noise must be nonnegative"));
        }
        if !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) {
            return Err(Error::config("training.adam_beta1", "moment decays must lie in [0, 1)"));
        }
        if t.total_episodes() == 0 {
            return Err(Error::config("training.joint_episodes", "at least one training episode required"));
        }
        if e.convergence_window < 2 {
            return Err(Error::config("experiment.convergence_window", "must be at least 2"));
        }
        if !(e.convergence_threshold > 0.0) {
            return Err(Error::config("experiment.convergence_threshold", "must be positive"));
        }
        if e.pair_seeds && e.systems.len() != e.seeds.len() {
            return Err(Error::config("experiment.seeds", "pair_seeds needs as many seeds as systems"));
        }
        s.alphabet().map_err(|err| match err {
            Error::Config { message, .. } => Error::config("system.gain_levels", message),
            other => other,
        })?;
        if s.channel_mode == ChannelMode::Joint {
            crate::channel::joint_state_count(s.alphabet()?.len(), s.channels)
                .map_err(|err| Error::config("system.channel_mode", err.to_string()))?;
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config { path: key, message } => Error::config(format!("{}: {key}", path.display()), message),
        other => other,
    })
}

pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.to_toml_string()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.system.sensor_budget, 20.0);
        assert_eq!(c.system.server_budget, 200.0);
        assert_eq!(c.system.attacker_budget, 1000.0);
        assert_eq!(c.system.blocklength, 200);
        assert_eq!(c.system.rate, 2.0);
        assert_eq!(c.system.noise, 0.01);
        assert_eq!(c.system.alphabet().unwrap(), GainAlphabet::default());
    }

    #[test]
    fn negative_budget_rejected() {
        let err = ExperimentConfig::from_toml_str("[system]\nsensor_budget = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "system.sensor_budget"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("[system]\nsensorz = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn presets_and_overrides() {
        let c = ExperimentConfig::from_toml_str("preset = \"lss\"\n").unwrap();
        assert_eq!((c.system.sensors, c.system.channels), (20, 10));
        let c = ExperimentConfig::from_toml_str("preset = \"mini\"\n[system]\nsensors = 3\n").unwrap();
        assert_eq!((c.system.sensors, c.system.channels, c.system.gain_levels_count), (3, 2, 4));
        assert!(ExperimentConfig::from_toml_str("preset = \"huge\"\n").is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("cdc-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        for c in [ExperimentConfig::sss(), ExperimentConfig::lss(), ExperimentConfig::mini()] {
            let mut c = c;
            c.system.gain_levels = Some(vec![1e-3, 0.0123, 0.3]);
            c.training.critic_lr = 3.3e-4;
            save_config(&c, &path).unwrap();
            assert_eq!(load_config(&path).unwrap(), c);
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn joint_mode_refuses_huge_chains() {
        let err = ExperimentConfig::from_toml_str("preset = \"lss\"\n[system]\nchannel_mode = \"joint\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(ExperimentConfig::from_toml_str("[system]\nchannel_mode = \"joint\"\n").is_ok());
    }

    #[test]
    fn exploration_schedule() {
        let t = TrainingConfig::default();
        assert!((t.exploration_std(0) - 0.2).abs() < 1e-15);
        assert!((t.exploration_std(t.total_episodes() - 1) - 0.02).abs() < 1e-15);
    }
}

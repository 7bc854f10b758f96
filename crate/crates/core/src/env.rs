//! Slot-level simulator: channel and attacker chains, the control channel,
//! the NOMA uplink and the remote estimator's AoI and covariance state.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attack::{combine_actions, control_outcomes, control_sinr, AttackerChain};
use crate::channel::{ChannelChain, UplinkChannel};
use crate::error::{Error, Result};
use crate::estimation::{CovarianceTable, SensorEstState};
use crate::noma::{run_uplink, PowerAllocation};
use crate::rng::{substream, Rng, Substream};
use crate::system::{SystemSpec, UplinkStats};

/// Who decides each sensor's transmit powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    /// Central allocation where the control packet got through, local
    /// allocation elsewhere.
    Collaborative,
    /// Every sensor follows the central allocation (no attack reaches it).
    CentralOnly,
    /// Every sensor follows its local allocation; no control channel.
    DistributedOnly,
}

/// Result of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Control packet delivered to each sensor.
    pub beta: Vec<bool>,
    /// Jamming reached the control channel; never set in the modes that
    /// bypass it, although the attacker chain keeps running.
    pub attacking: bool,
    pub executed: PowerAllocation,
    pub success: Vec<bool>,
    /// `Σ_n tr h^{τ_n}(P̄_n)` after the uplink.
    pub cost: f64,
}

/// Running checks maintained by the simulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub steps: u64,
    /// Slots where some executed, central or local row exceeded `E^s`.
    pub budget_violations: u64,
    /// Largest relative gap between the recursively propagated covariance
    /// and the memoized `h^τ(P̄)`.
    pub max_covariance_rel_error: f64,
}

/// Per-episode seed derived from a run seed; distinct episodes get
/// unrelated streams.
pub fn episode_seed(run_seed: u64, episode: u64) -> u64 {
    let mut z = run_seed ^ episode.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Environment {
    spec: Arc<SystemSpec>,
    tables: Vec<CovarianceTable>,
    est: Vec<SensorEstState>,
    uplink: Vec<UplinkChannel>,
    control: Vec<ChannelChain>,
    jamming: Vec<ChannelChain>,
    attacker: AttackerChain,
    channel_rngs: Vec<Rng>,
    decode_rng: Rng,
    control_rng: Rng,
    attacker_rng: Rng,
    pub audit: Audit,
}

impl Environment {
    pub fn new(spec: Arc<SystemSpec>, seed: u64) -> Result<Self> {
        let tables = spec.covariance_tables();
        let placeholder = crate::rng::substream(0, Substream::Decode);
        let mut env = Self {
            tables,
            est: Vec::new(),
            uplink: Vec::new(),
            control: Vec::new(),
            jamming: Vec::new(),
            attacker: AttackerChain::new(spec.attacker.clone(), false, spec.config.attacker_budget)?,
            channel_rngs: Vec::new(),
            decode_rng: placeholder.clone(),
            control_rng: placeholder.clone(),
            attacker_rng: placeholder,
            spec,
            audit: Audit::default(),
        };
        env.reset(seed)?;
        Ok(env)
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn tables(&self) -> &[CovarianceTable] {
        &self.tables
    }

    /// Zero AoI, steady-state covariances and fresh chains started from
    /// their stationary laws, all driven by streams of `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<()> {
        let spec = self.spec.clone();
        let n = spec.sensors();
        self.channel_rngs = (0..n).map(|i| substream(seed, Substream::Channels(i as u32))).collect();
        self.decode_rng = substream(seed, Substream::Decode);
        self.control_rng = substream(seed, Substream::Control);
        self.attacker_rng = substream(seed, Substream::Attacker);
        self.est = spec.processes.iter().map(SensorEstState::new).collect();
        self.uplink.clear();
        self.control.clear();
        self.jamming.clear();
        let psi = spec.alphabet.len();
        for i in 0..n {
            let rng = &mut self.channel_rngs[i];
            self.uplink.push(match &spec.uplink[i] {
                UplinkStats::Factorized(ts) => UplinkChannel::Factorized(
                    ts.iter()
                        .map(|t| ChannelChain::stationary_start(t.clone(), rng))
                        .collect::<Result<_>>()?,
                ),
                UplinkStats::Joint(t) => UplinkChannel::Joint {
                    chain: ChannelChain::stationary_start(t.clone(), rng)?,
                    psi,
                    m: spec.channels(),
                },
            });
            self.control.push(ChannelChain::stationary_start(spec.control[i].clone(), rng)?);
            self.jamming.push(ChannelChain::stationary_start(spec.jamming[i].clone(), rng)?);
        }
        self.attacker =
            AttackerChain::stationary_start(spec.attacker.clone(), spec.config.attacker_budget, &mut self.attacker_rng)?;
        Ok(())
    }

    pub fn taus(&self) -> Vec<u32> {
        self.est.iter().map(|e| e.tau).collect()
    }

    pub fn attacking(&self) -> bool {
        self.attacker.attacking
    }

    /// Current uplink gains, sensors × channels.
    pub fn gains(&self) -> Array2<f64> {
        let (n, m) = (self.spec.sensors(), self.spec.channels());
        let mut g = Array2::zeros((n, m));
        for (i, ch) in self.uplink.iter().enumerate() {
            for (j, v) in ch.gains(&self.spec.alphabet).into_iter().enumerate() {
                g[(i, j)] = v;
            }
        }
        g
    }

    /// Control and jamming gains of each sensor.
    pub fn control_gains(&self) -> (Vec<f64>, Vec<f64>) {
        let a = &self.spec.alphabet;
        (
            self.control.iter().map(|c| a.level(c.state)).collect(),
            self.jamming.iter().map(|c| a.level(c.state)).collect(),
        )
    }

    /// Global observation `[τ_n/τ_max, ĝ_n1 .. ĝ_nM]` per sensor, sensor
    /// major, with gains mapped to `[0, 1]` on a log scale.
    pub fn observation(&self) -> Vec<f64> {
        let tau_max = self.spec.config.tau_max as f64;
        let mut obs = Vec::with_capacity(self.spec.sensors() * (self.spec.channels() + 1));
        for (e, ch) in self.est.iter().zip(&self.uplink) {
            obs.push(e.tau as f64 / tau_max);
            obs.extend(ch.gains(&self.spec.alphabet).into_iter().map(|g| self.spec.alphabet.normalize(g)));
        }
        obs
    }

    /// Control packet delivery for the current slot.
    pub fn control_delivery(&mut self) -> Vec<bool> {
        let cfg = &self.spec.config;
        let ea = self.attacker.energy();
        let (gd, ga) = self.control_gains();
        let sinrs: Vec<f64> = gd
            .iter()
            .zip(&ga)
            .map(|(&d, &a)| control_sinr(d, a, cfg.server_budget, ea, cfg.noise))
            .collect();
        control_outcomes(&sinrs, &cfg.control_link(), &mut self.control_rng)
    }

    /// Plays one slot. Control outcomes are drawn first so that `beta` can
    /// be supplied lazily; `distributed` is only consulted for rows that
    /// missed the control packet.
    pub fn step(&mut self, mode: ControlMode, central: &PowerAllocation, distributed: &PowerAllocation) -> Result<StepRecord> {
        let (n, m) = (self.spec.sensors(), self.spec.channels());
        for a in [central, distributed] {
            if a.0.dim() != (n, m) {
                return Err(Error::Shape(format!("allocation {:?}, system is {n}x{m}", a.0.dim())));
            }
            if a.0.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFinite("power allocation".into()));
            }
        }
        let attacking = self.attacker.attacking && mode == ControlMode::Collaborative;
        let beta = match mode {
            ControlMode::Collaborative => self.control_delivery(),
            ControlMode::CentralOnly => vec![true; n],
            ControlMode::DistributedOnly => vec![false; n],
        };
        let executed = combine_actions(central, distributed, &beta)?;
        let budget = self.spec.config.sensor_budget;
        let relevant_central = mode != ControlMode::DistributedOnly;
        let relevant_local = mode != ControlMode::CentralOnly;
        if !executed.is_feasible(budget)
            || (relevant_central && !central.is_feasible(budget))
            || (relevant_local && !distributed.is_feasible(budget))
        {
            self.audit.budget_violations += 1;
        }

        let gains = self.gains();
        let outcome = run_uplink(gains.view(), &executed, &self.spec.config.data_link(), &mut self.decode_rng)?;
        let cfg = &self.spec.config;
        for (i, st) in self.est.iter_mut().enumerate() {
            st.advance(outcome.success[i], &self.spec.processes[i], cfg.tau_max, cfg.cost_cap);
            let table = self.tables[i].covariance(st.tau);
            let err = (&st.p - table).norm() / table.norm();
            if err > self.audit.max_covariance_rel_error {
                self.audit.max_covariance_rel_error = err;
            }
        }
        let cost = crate::estimation::step_cost(&self.taus(), &self.tables)?;
        self.audit.steps += 1;

        for i in 0..n {
            let rng = &mut self.channel_rngs[i];
            self.uplink[i].step(rng);
            self.control[i].step(rng);
            self.jamming[i].step(rng);
        }
        self.attacker.step(&mut self.attacker_rng);

        Ok(StepRecord {
            beta,
            attacking,
            executed,
            success: outcome.success,
            cost,
        })
    }
}

//! Static description of one simulated system: plants, channel statistics
//! and the attacker, all drawn from a system seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{joint_state_count, sample_transition_matrix, GainAlphabet, TransitionMatrix};
use crate::config::{ChannelMode, SystemConfig};
use crate::error::{Error, Result};
use crate::estimation::{generate_process, CovarianceTable, ProcessModel, RiccatiOptions};
use crate::rng::{scheme_description, substream, Substream};

/// Uplink gain statistics of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UplinkStats {
    /// One ψ×ψ matrix per subchannel.
    Factorized(Vec<TransitionMatrix>),
    /// One ψ^M×ψ^M matrix.
    Joint(TransitionMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub system_id: u64,
    pub config: SystemConfig,
    pub alphabet: GainAlphabet,
    pub processes: Vec<ProcessModel>,
    pub uplink: Vec<UplinkStats>,
    /// Server-to-sensor control channel gain chain, per sensor.
    pub control: Vec<TransitionMatrix>,
    /// Attacker-to-sensor jamming gain chain, per sensor.
    pub jamming: Vec<TransitionMatrix>,
    /// Attacker on/off chain, `[silent, attacking]`.
    pub attacker: TransitionMatrix,
}

impl SystemSpec {
    pub fn sensors(&self) -> usize {
        self.processes.len()
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn covariance_tables(&self) -> Vec<CovarianceTable> {
        self.processes
            .iter()
            .map(|p| CovarianceTable::new(p, self.config.tau_max, self.config.cost_cap))
            .collect()
    }

    /// SHA-256 over the JSON encoding of the spec.
    pub fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Draws plants from the process-generation stream and every transition
/// matrix from the channel-generation stream of `system_id`.
pub fn generate_system(config: &SystemConfig, system_id: u64) -> Result<SystemSpec> {
    let alphabet = config.alphabet()?;
    let psi = alphabet.len();
    let mut proc_rng = substream(system_id, Substream::ProcessGen);
    let processes = (0..config.sensors)
        .map(|n| {
            generate_process(
                config.state_dim,
                (config.radius_min, config.radius_max),
                RiccatiOptions::default(),
                &mut proc_rng,
            )
            .map_err(|e| match e {
                Error::RiccatiNonConvergence {
                    iterations, residual, ..
                } => Error::RiccatiNonConvergence {
                    sensor: n,
                    iterations,
                    residual,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ch_rng = substream(system_id, Substream::ChannelGen);
    let joint_size = match config.channel_mode {
        ChannelMode::Joint => Some(joint_state_count(psi, config.channels)?),
        ChannelMode::Factorized => None,
    };
    let mut uplink = Vec::with_capacity(config.sensors);
    let mut control = Vec::with_capacity(config.sensors);
    let mut jamming = Vec::with_capacity(config.sensors);
    for _ in 0..config.sensors {
        uplink.push(match joint_size {
            Some(size) => UplinkStats::Joint(sample_transition_matrix(size, &mut ch_rng)),
            None => UplinkStats::Factorized(
                (0..config.channels)
                    .map(|_| sample_transition_matrix(psi, &mut ch_rng))
                    .collect(),
            ),
        });
        control.push(sample_transition_matrix(psi, &mut ch_rng));
        jamming.push(sample_transition_matrix(psi, &mut ch_rng));
    }
    Ok(SystemSpec {
        system_id,
        config: config.clone(),
        alphabet,
        processes,
        uplink,
        control,
        jamming,
        attacker: config.attacker.transition(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemManifest {
    pub system_id: u64,
    pub digest: String,
    pub rng_scheme: String,
    pub spectral_radii: Vec<f64>,
    pub spec: SystemSpec,
}

impl SystemManifest {
    pub fn new(spec: &SystemSpec) -> Result<Self> {
        Ok(Self {
            system_id: spec.system_id,
            digest: spec.digest()?,
            rng_scheme: scheme_description().into(),
            spectral_radii: spec
                .processes
                .iter()
                .map(|p| crate::estimation::spectral_radius(&p.a))
                .collect(),
            spec: spec.clone(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads a manifest and checks the stored digest against its contents.
    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let actual = m.spec.digest()?;
        if actual != m.digest {
            return Err(Error::Checkpoint(format!(
                "system manifest {} digest mismatch: stored {}, contents {}",
                path.display(),
                m.digest,
                actual
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn generation_is_deterministic() {
        let c = ExperimentConfig::sss().system;
        let a = generate_system(&c, 3).unwrap();
        let b = generate_system(&c, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        assert_ne!(a.digest().unwrap(), generate_system(&c, 4).unwrap().digest().unwrap());
        assert_eq!(a.sensors(), 6);
        for p in &a.processes {
            let r = crate::estimation::spectral_radius(&p.a);
            assert!((1.0..1.3).contains(&r), "{r}");
        }
    }

    #[test]
    fn manifest_round_trip_detects_tampering() {
        let spec = generate_system(&ExperimentConfig::mini().system, 0).unwrap();
        let dir = std::env::temp_dir().join(format!("cdc-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        SystemManifest::new(&spec).unwrap().write(&path).unwrap();
        assert_eq!(SystemManifest::read(&path).unwrap().spec, spec);
        let text = std::fs::read_to_string(&path).unwrap().replacen("\"system_id\": 0", "\"system_id\": 9", 2);
        std::fs::write(&path, text).unwrap();
        assert!(SystemManifest::read(&path).is_err());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn joint_mode_builds_product_chain() {
        let mut c = ExperimentConfig::mini().system;
        c.channel_mode = ChannelMode::Joint;
        let spec = generate_system(&c, 1).unwrap();
        match &spec.uplink[0] {
            UplinkStats::Joint(t) => assert_eq!(t.size(), 16),
            _ => panic!("expected joint stats"),
        }
    }
}

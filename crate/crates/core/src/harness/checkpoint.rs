//! Binary checkpoints: an 8-byte magic, a little-endian format version and
//! header length, a JSON header describing the run and its networks, then a
//! bincode payload with every learner's weights, optimizer moments and
//! replay memory.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::AgentKind;
use crate::config::ExperimentConfig;
use crate::env::Audit;
use crate::error::{Error, Result};
use crate::nn::ArchDescriptor;
use crate::training::{EpisodeStats, Learner};

pub const MAGIC: &[u8; 8] = b"CDCDRLCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub arch: ArchDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub agent: AgentKind,
    pub system_id: u64,
    pub seed: u64,
    /// Episodes completed; training resumes at this 0-based index.
    pub next_episode: usize,
    pub total_episodes: usize,
    pub system_digest: String,
    pub config: ExperimentConfig,
    pub networks: Vec<NetworkEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPayload {
    pub learners: Vec<Learner>,
    pub audits: Vec<Audit>,
    /// Per-learner episode statistics so far.
    pub stats: Vec<Vec<EpisodeStats>>,
    /// The run's reported cost curve.
    pub series: Vec<f64>,
}

pub fn describe_networks(learners: &[Learner]) -> Vec<NetworkEntry> {
    let mut out = Vec::new();
    for (i, l) in learners.iter().enumerate() {
        let prefix = format!("{i}:{}", l.algorithm.name());
        out.push(NetworkEntry {
            name: format!("{prefix}/critic"),
            arch: l.critic.descriptor(),
        });
        if let Some(c) = &l.central {
            out.push(NetworkEntry {
                name: format!("{prefix}/central"),
                arch: c.net.descriptor(),
            });
        }
        if let Some(d) = &l.distributed {
            for (n, net) in d.actors.nets.iter().enumerate() {
                out.push(NetworkEntry {
                    name: format!("{prefix}/local{n}"),
                    arch: net.descriptor(),
                });
            }
        }
    }
    out
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, payload: &CheckpointPayload) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    let body = bincode::serialize(payload).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(head.len() as u32).to_le_bytes())?;
        f.write_all(&head)?;
        f.write_all(&body)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_header_from(r: &mut impl Read) -> Result<CheckpointHeader> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    r.read_exact(&mut word)?;
    let mut head = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut head)?;
    Ok(serde_json::from_slice(&head)?)
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    read_header_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Reads a checkpoint and checks the payload networks against the header.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, CheckpointPayload)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header_from(&mut r)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let payload: CheckpointPayload = bincode::deserialize(&body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if describe_networks(&payload.learners) != header.networks {
        return Err(Error::Checkpoint("network architectures differ from the header".into()));
    }
    Ok((header, payload))
}

//! Named random substreams.
//!
//! Every stochastic component draws from its own ChaCha8 stream derived from
//! one master seed: the seed fixes the key and the substream fixes the
//! ChaCha stream id, so streams never overlap and each component replays
//! independently of how much randomness the others consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

/// Streams are `kind << 32 | index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Substream {
    ProcessGen,
    ChannelGen,
    /// Per-sensor channel evolution (data, control and jamming chains).
    Channels(u32),
    Decode,
    Control,
    Attacker,
    Exploration,
    Replay,
    Init,
    Evaluation,
}

impl Substream {
    pub fn id(self) -> u64 {
        let (kind, index) = match self {
            Substream::ProcessGen => (1u64, 0u32),
            Substream::ChannelGen => (2, 0),
            Substream::Channels(n) => (3, n),
            Substream::Decode => (4, 0),
            Substream::Control => (5, 0),
            Substream::Attacker => (6, 0),
            Substream::Exploration => (7, 0),
            Substream::Replay => (8, 0),
            Substream::Init => (9, 0),
            Substream::Evaluation => (10, 0),
        };
        (kind << 32) | index as u64
    }

    pub fn name(self) -> String {
        match self {
            Substream::ProcessGen => "process-gen".into(),
            Substream::ChannelGen => "channel-gen".into(),
            Substream::Channels(n) => format!("channels/{n}"),
            Substream::Decode => "decode".into(),
            Substream::Control => "control".into(),
            Substream::Attacker => "attacker".into(),
            Substream::Exploration => "exploration".into(),
            Substream::Replay => "replay-sampling".into(),
            Substream::Init => "init".into(),
            Substream::Evaluation => "evaluation".into(),
        }
    }
}

pub fn substream(seed: u64, stream: Substream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Human-readable description of the stream layout, embedded in manifests.
pub fn scheme_description() -> &'static str {
    "ChaCha8 keyed by seed_from_u64(master_seed); stream id = (kind << 32) | index with kinds \
     1 process-gen, 2 channel-gen, 3 channels/<sensor>, 4 decode, 5 control, 6 attacker, \
     7 exploration, 8 replay-sampling, 9 init, 10 evaluation"
}

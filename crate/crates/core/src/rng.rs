//! Reproducible random streams keyed by `(master seed, replicate, stage, shell)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

pub type StreamRng = ChaCha8Rng;

/// Largest replicate index addressable by a stream id.
pub const MAX_REPLICATE: u64 = (1 << 40) - 1;

/// Stage tags; each consumer of randomness owns one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum StreamTag {
    Minus = 1,
    Critical = 2,
    Sprinkle = 3,
    Scaled = 4,
    Naive = 5,
    Torus = 6,
    Branching = 7,
    Coupling = 8,
    Coalescent = 9,
    Limit = 10,
    PairSampling = 11,
    Bootstrap = 12,
    Partition = 13,
    Exploration = 14,
    Misc = 15,
}

/// Master seed plus the stream derivation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// ChaCha8 keyed by the master seed, positioned on the stream id
    /// `replicate (40 bits) | tag (8 bits) | shell (16 bits)`.
    pub fn stream(&self, replicate: u64, tag: StreamTag, shell: u32) -> Result<StreamRng> {
        if replicate > MAX_REPLICATE {
            return param(format!("replicate index {replicate} exceeds 2^40 - 1"));
        }
        if shell > u16::MAX as u32 {
            return param(format!("shell index {shell} exceeds 16 bits"));
        }
        Ok(self.stream_unchecked(replicate, tag, shell))
    }

    pub(crate) fn stream_unchecked(&self, replicate: u64, tag: StreamTag, shell: u32) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(expand_key(self.master_seed));
        rng.set_stream(stream_id(replicate, tag, shell));
        rng
    }
}

#[inline]
pub fn stream_id(replicate: u64, tag: StreamTag, shell: u32) -> u64 {
    (replicate << 24) | ((tag as u64) << 16) | (shell as u64 & 0xffff)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn expand_key(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

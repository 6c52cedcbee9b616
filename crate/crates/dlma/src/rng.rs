//! Deterministic randomness, split into named substreams.
//!
//! Every stochastic component of a run (uplink erasures, downlink erasures,
//! each ALOHA node, each agent's exploration, weight init, and replay
//! sampling) draws from its own generator, keyed by the master seed plus a
//! stable label. Toggling one component therefore never shifts the draws seen
//! by any other, and reruns with the same seed are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes. A fixed hash (rather than the std hasher,
/// whose output may change between releases) keeps streams stable across
/// toolchain upgrades.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 step, used to expand one 64-bit state into a 256-bit cipher key.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives independent substreams from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedSplitter {
    master: u64,
}

impl SeedSplitter {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    /// A fresh generator for the component named by `label`.
    /// Equal (master, label) pairs always yield identical streams.
    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        let mut state = self.master ^ fnv1a(label.as_bytes());
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

//! Deterministic seed derivation.
//!
//! Every source of randomness in a run is a pure function of the master
//! seed and a path of labels/indices, so any trial (or any single twin
//! evaluation inside it) can be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A node in the seed-derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            state: splitmix64(master_seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    /// Derive a child stream from a string label.
    pub fn child(&self, label: &str) -> Self {
        let mut s = self.state;
        for &b in label.as_bytes() {
            s = splitmix64(s ^ u64::from(b));
        }
        Self { state: s }
    }

    /// Derive a child stream from a numeric index.
    pub fn index(&self, idx: u64) -> Self {
        Self {
            state: splitmix64(self.state ^ idx.wrapping_mul(0xbf58_476d_1ce4_e5b9)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.state
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

//! Named, reproducible random streams.
//!
//! A stream is identified by `(seed, purpose, entity, index)` and maps to an
//! independent ChaCha8 generator. Two runs that ask for the same key see the
//! same draws, which is what lets coupled policy runs share per-link service
//! times without coordinating with each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Service,
    Tick,
    Generation,
    GatewayDelay,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Service => 0x5e41,
            Purpose::Tick => 0x71c4,
            Purpose::Generation => 0x6e47,
            Purpose::GatewayDelay => 0xde1a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    /// Link id, node id, or any other entity owning the stream.
    pub entity: u64,
    pub index: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, entity: u64) -> Self {
        Self {
            seed,
            purpose,
            entity,
            index: 0,
        }
    }

    pub fn with_index(self, index: u64) -> Self {
        Self { index, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut h = splitmix(self.seed);
        h = splitmix(h ^ self.purpose.tag());
        h = splitmix(h ^ self.entity);
        h = splitmix(h ^ self.index);
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_mut(8).enumerate() {
            h = splitmix(h ^ i as u64);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Derives a sub-seed, e.g. one per replication or per policy.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix(splitmix(seed) ^ splitmix(salt.wrapping_add(0x51ed)))
}

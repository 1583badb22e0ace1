//! Deterministic, splittable randomness.
//!
//! Every randomized routine in the crate takes a [`SeededRng`] rather than a
//! live generator. A `SeededRng` is just a `(seed, stream_id)` pair; the
//! actual generator is a ChaCha8 instance keyed by the seed and positioned
//! on the given stream, so two descriptors that compare equal always yield
//! the same draws no matter which thread materializes them or in what order.
//! Child streams (per document, per replicate, per K) are derived with
//! [`SeededRng::substream`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    pub seed: u64,
    pub stream_id: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child descriptor for `tag`. Distinct tags give independent streams;
    /// the derivation only depends on `(self, tag)`.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x51_7c_c1_b7))),
        }
    }

    /// Nested substream, e.g. `rng.path(&[REPLICATE, r, K, k])`.
    pub fn path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |acc, &t| acc.substream(t))
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

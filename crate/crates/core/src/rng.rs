//! Seeded noise streams.
//!
//! A [`NoiseStream`] belongs to exactly one run. Every oracle call opens a
//! fresh ChaCha8 substream keyed by `(run seed, oracle seed, call index)`, so
//! the noise drawn at call `t` depends only on those three values. Two runs
//! that query the oracle the same number of times see the same noise, no
//! matter how the runs are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, used to decorrelate nearby seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-run source of oracle randomness.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    calls: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, calls: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of oracle calls served so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Opens the substream for the next call and advances the call counter.
    pub fn next_substream(&mut self, salt: u64) -> ChaCha8Rng {
        let key = splitmix64(self.seed ^ splitmix64(salt));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(self.calls);
        self.calls += 1;
        rng
    }

    /// Advances the call counter without drawing (noiseless oracles).
    pub fn skip(&mut self) {
        self.calls += 1;
    }
}

/// Generator for problem data (matrices, vectors) from a seed.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed))
}

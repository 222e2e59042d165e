//! Reproducible, splittable random streams.
//!
//! A stream is identified by `(seed, stream_id)` and backed by ChaCha8, whose
//! output is specified bit-for-bit and therefore identical on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// An independent child stream. The child depends only on this stream's
    /// identity and `child_id`, never on how many draws were already taken.
    pub fn child(&self, child_id: u64) -> RngStream {
        let child_seed = mix64(self.seed ^ mix64(self.stream_id.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        RngStream::new(child_seed, child_id)
    }

    pub fn sample<T, D: Distribution<T>>(&mut self, dist: D) -> T {
        self.inner.sample(dist)
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }
}

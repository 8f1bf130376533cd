//! Reproducible random streams.
//!
//! A [`SeededRng`] is ChaCha8 keyed by the master seed, with the 64-bit
//! ChaCha stream id selecting an independent sequence. Per-sample streams
//! are derived from `(master_seed, pair_index, flare_index)` so results do
//! not depend on which worker runs a sample.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Flare slot used for per-pair draws (flare count, template, FOV, gamma).
pub const PAIR_SLOT: u64 = u64::MAX;
/// Flare slot used by the dataset runner to pick a background.
pub const BACKGROUND_SLOT: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl StreamId {
    pub fn for_sample(master_seed: u64, pair_index: u64, flare_slot: u64) -> Self {
        StreamId {
            master_seed,
            stream_index: mix(mix(pair_index ^ 0x6a09_e667_f3bc_c908).wrapping_add(flare_slot)),
        }
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct SeededRng {
    id: StreamId,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(id: StreamId) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(id.master_seed);
        inner.set_stream(id.stream_index);
        SeededRng { id, inner }
    }

    pub fn for_sample(master_seed: u64, pair_index: u64, flare_slot: u64) -> Self {
        SeededRng::new(StreamId::for_sample(master_seed, pair_index, flare_slot))
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` exactly when `lo == hi`.
    /// Always consumes one draw.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.unit();
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * u
        }
    }

    /// Uniform integer in `lo..=hi`. Always consumes one draw.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        let u = self.unit();
        let n = hi - lo + 1;
        lo + ((u * n as f64) as u64).min(n - 1)
    }

    /// Uniform index into a non-empty slice.
    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.uniform_int(0, items.len() as u64 - 1) as usize]
    }
}

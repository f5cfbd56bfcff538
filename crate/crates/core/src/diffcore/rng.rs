//! Counter-based, splittable random streams.
//!
//! A stream is a 64-bit key plus a counter. Each draw hashes `key + counter`
//! through the SplitMix64 finalizer, so the n-th draw of a stream can be
//! produced without touching the draws before it, and child streams are
//! derived by hashing the parent key with a child index. Dropout masks and
//! Gaussian noise are addressed as `root.derive(sample).derive(layer)`, which
//! makes them independent of execution order.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN).wrapping_add(stream_id.wrapping_mul(GOLDEN)));
        RngStream {
            seed,
            stream_id,
            key,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream `index` of this stream. Does not advance `self`.
    pub fn derive(&self, index: u64) -> RngStream {
        let key = mix64(self.key ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN)));
        RngStream {
            seed: self.seed,
            stream_id: index,
            key,
            counter: 0,
        }
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(self)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

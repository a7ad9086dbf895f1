//! Counter-based splittable random streams.
//!
//! A stream is addressed by `(seed, stream id, counter)`. The id is derived by
//! mixing a domain tag with structured coordinates (epoch, iteration, slot,
//! sample index, ...), so the draws assigned to a coordinate never depend on
//! how work is scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Domain tags separating the uses of the experiment seed.
pub mod domain {
    pub const INIT: u64 = 0x01;
    pub const TRAIN_INDEX: u64 = 0x02;
    pub const TRAIN_THETA: u64 = 0x03;
    pub const DECISION_THETA: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const ELASTIC_FIELD: u64 = 0x06;
    pub const EXPORT: u64 = 0x07;
    pub const TEST: u64 = 0xff;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable stream id for a domain tag and a coordinate path.
pub fn stream_id(domain: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix(domain), |acc, &c| splitmix(acc ^ splitmix(c)))
}

/// One addressable random stream, positioned at `counter` 32-bit words.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self::at(seed, stream, 0)
    }

    pub fn at(seed: u64, stream: u64, counter: u128) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        inner.set_word_pos(counter);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn derive(seed: u64, domain: u64, coords: &[u64]) -> Self {
        Self::new(seed, stream_id(domain, coords))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

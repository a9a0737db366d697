//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream, counter)`, so the value of a
//! draw never depends on how many other draws happened before it or on the
//! order in which threads evaluate work. ChaCha8 is used as the keyed block
//! function: the seed selects the key, the stream selects the ChaCha stream
//! id and the counter selects the word position.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer; used to derive independent child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(seed, domain)`. Distinct domains give unrelated keys.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    mix64(seed ^ mix64(domain))
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * TWO_POW_NEG_53
}

/// A sequential reader over one `(seed, stream)` pair. The `k`-th value it
/// yields equals `keyed_u64(seed, stream, k)`.
#[derive(Clone, Debug)]
pub struct Stream {
    inner: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Stream { inner }
    }

    pub fn at(seed: u64, stream: u64, counter: u64) -> Self {
        let mut s = Self::new(seed, stream);
        s.inner.set_word_pos(u128::from(counter) * 2);
        s
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_uniform() < p
    }
}

pub fn keyed_u64(seed: u64, stream: u64, counter: u64) -> u64 {
    Stream::at(seed, stream, counter).next_u64()
}

pub fn keyed_uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    to_unit(keyed_u64(seed, stream, counter))
}

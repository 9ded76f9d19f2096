//! Seeded random streams.
//!
//! Every stochastic draw in the simulator comes from a ChaCha8 stream keyed
//! by `(seed, tick, stream)`, so any sensor or channel sample can be
//! reproduced in isolation without replaying the draws that preceded it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags keep unrelated consumers from sharing draws.
pub mod stream {
    pub const GAS: u64 = 0x01;
    pub const GPS: u64 = 0x02;
    pub const DETECT: u64 = 0x03;
    pub const FALSE_POSITIVE: u64 = 0x04;
    pub const CHANNEL: u64 = 0x05;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes any number of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// A fresh generator for `(seed, tick, stream, salt)`.
pub fn stream_rng(seed: u64, tick: u64, stream: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, tick, stream, salt]))
}

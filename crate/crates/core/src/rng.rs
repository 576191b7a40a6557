//! Deterministic RNG substreams.
//!
//! Every random draw is keyed by `(seed, stream, index...)` so that results do
//! not depend on the order in which independent work items are processed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_GENERATE: u64 = 0x6765_6e00;
pub const STREAM_SAMPLE: u64 = 0x7361_6d70;
pub const STREAM_BATCH: u64 = 0x6261_7463;
pub const STREAM_POLLUTE: u64 = 0x706f_6c6c;
pub const STREAM_INIT: u64 = 0x696e_6974;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `seed` and `keys` into a 64-bit substream seed.
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn substream(seed: u64, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(mix(seed, keys))
}

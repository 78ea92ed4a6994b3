//! Seeded random streams keyed by run coordinates.
//!
//! Every stochastic choice in a run (sample noise, mask plans, pair draws,
//! dropout, shuffling) draws from a stream derived from the global seed plus
//! a tuple of coordinates, so the result does not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a list of coordinates into a single 64-bit key.
pub fn derive_key(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c.wrapping_add(0xA5A5))))
}

pub fn stream(seed: u64, coords: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, coords))
}

/// Stream tags, so different consumers never share a stream.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const BALANCE: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const SUBSET: u64 = 6;
    pub const PRETRAIN: u64 = 10;
    pub const FINETUNE: u64 = 11;
}

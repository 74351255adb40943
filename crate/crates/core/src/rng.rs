//! Seed derivation. Every random stream in a run is keyed by
//! `(run seed, purpose, ids...)` so streams are independent of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BYZANTINE: u64 = 3;
    pub const CLIENT_TRAIN: u64 = 4;
    pub const LABEL_FLIP: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const AGGREGATOR_ATTACK: u64 = 7;
    pub const SELECTION: u64 = 8;
    pub const AUTH: u64 = 9;
    pub const SWEEP_CELL: u64 = 10;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with `tags` into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, tags))
}

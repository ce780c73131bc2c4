//! Counter-based seed splitting.
//!
//! Every random draw in the pipeline comes from a generator seeded by
//! `derive(master, &[tag, i, j, ...])`, so results do not depend on the order
//! in which positions, base stations or passes are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags keep independent consumers from sharing draws.
pub mod stream {
    pub const ENVIRONMENT: u64 = 0x454e_5631;
    pub const POSITIONS: u64 = 0x504f_5331;
    pub const SPLIT: u64 = 0x5350_4c31;
    pub const PATHS: u64 = 0x5041_5431;
    pub const TRAIN_NOISE: u64 = 0x544e_5331;
    pub const TEST_NOISE: u64 = 0x5445_4e31;
    pub const BLOCKAGE: u64 = 0x424c_4b31;
    pub const INIT: u64 = 0x494e_4931;
    pub const SHUFFLE: u64 = 0x5348_5531;
    pub const DROPOUT: u64 = 0x4452_5031;
    pub const MC_PASS: u64 = 0x4d43_5031;
    pub const MODEL: u64 = 0x4d4f_4431;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a master seed and a path of counters.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

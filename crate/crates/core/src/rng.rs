//! Seed derivation.
//!
//! Every random decision in the library draws from a generator seeded by
//! `derive_seed(parent, stream)`. Streams are addressed by position (tree
//! index, slot/fold index, layer index) rather than by draw order, so the
//! outcome does not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags for top-level seed derivation.
pub(crate) mod stream {
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const SEARCH_SPLIT: u64 = 0x5350_4c54;
    pub const SEARCH_RANDOM: u64 = 0x5352_4e44;
    pub const SEARCH_COMPLETELY_RANDOM: u64 = 0x5343_524e;
    pub const LAYER: u64 = 0x4c41_5952;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` under `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

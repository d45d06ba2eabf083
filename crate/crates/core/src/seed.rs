//! Counter-based seed derivation.
//!
//! Every random stream in the crate is seeded from a master seed plus a
//! position, so results do not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}

/// Stream identifiers, kept distinct so that streams never alias.
pub(crate) mod streams {
    pub const RESTART: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const CV_FOLDS: u64 = 3;
    pub const DATASET: u64 = 4;
    pub const BANDS: u64 = 5;
    pub const EVALUATION: u64 = 6;
}

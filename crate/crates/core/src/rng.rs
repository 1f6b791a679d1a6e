//! Seeded random streams.
//!
//! Every unit of parallel work (a genotype column, a subsample, a bootstrap
//! replicate) draws from its own ChaCha stream whose key is derived from the
//! master seed and a path of integer labels. Results therefore never depend
//! on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels. Values are part of the reproducibility contract; do not
/// renumber.
pub mod label {
    pub const GENOTYPE: u64 = 1;
    pub const EFFECTS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const FIXED: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const STABILITY: u64 = 7;
    pub const SWEEP: u64 = 8;
    pub const CALIBRATION: u64 = 9;
    pub const REPLICATE: u64 = 10;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a label path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

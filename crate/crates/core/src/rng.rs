//! Seed derivation.
//!
//! Every random decision in the crate is drawn from a [`ChaCha8Rng`] whose
//! seed is derived from one user-facing 64-bit seed. [`derive`] hashes the
//! base seed together with a path of integers (component tag, step, index,
//! ...) using the SplitMix64 finaliser, so sibling streams are unrelated
//! while the whole run stays replayable. Individual walks of a batch use
//! ChaCha's native stream counter ([`walk_rng`]), which lets walks be
//! sampled in any order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type FlockRng = ChaCha8Rng;

/// Component tags used as the first element of derivation paths.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const WALKS: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const NEGATIVES: u64 = 4;
    pub const ENSEMBLE: u64 = 5;
    pub const PETALS: u64 = 6;
    pub const VERIFY: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const SYNTH: u64 = 9;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically mixes `path` into `seed`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_for(seed: u64, path: &[u64]) -> FlockRng {
    FlockRng::seed_from_u64(derive(seed, path))
}

/// Generator for walk `index` of the batch seeded by `batch_seed`.
pub fn walk_rng(batch_seed: u64, index: u64) -> FlockRng {
    let mut rng = FlockRng::seed_from_u64(batch_seed);
    rng.set_stream(index);
    rng
}

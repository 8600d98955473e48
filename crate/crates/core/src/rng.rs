//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`Rng`], a xoshiro256++
//! generator whose state is expanded from a 64-bit seed with splitmix64.
//! Independent streams (one per spectrum, per scene, per epoch) are derived
//! from a root seed with [`derive_seed`] so that parallel generation stays
//! reproducible.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// One splitmix64 step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `stream`-th independent substream of `root`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

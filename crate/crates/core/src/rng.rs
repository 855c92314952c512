//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! 64-bit seed. Seeds for trials and sub-streams are derived by hashing
//! `(master, stream, index)` so a trial's randomness does not depend on the
//! order in which trials run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used when deriving seeds.
pub mod stream {
    pub const TRIAL: u64 = 0x7472_6961_6c00_0001;
    pub const SOURCE: u64 = 0x736f_7572_6365_0002;
    pub const TARGET: u64 = 0x7461_7267_6574_0003;
    pub const EVAL: u64 = 0x6576_616c_0000_0004;
    pub const PROXY: u64 = 0x7072_6f78_7900_0005;
    pub const MODEL: u64 = 0x6d6f_6465_6c00_0006;
}

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master) ^ stream) ^ index)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Seeded randomness. Every random draw in the engine comes from a ChaCha8
//! stream whose seed is derived from the run seed plus a purpose tag, so that
//! results depend only on configuration, never on call order elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Purpose tags for derived streams.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const FINETUNE_INIT: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th stream of kind `stream` under run seed `seed`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn derived(seed: u64, stream: u64, index: u64) -> Rng {
    seeded(derive_seed(seed, stream, index))
}

/// FNV-1a; stable across platforms and toolchain versions, unlike `DefaultHasher`.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

//! Seed derivation.
//!
//! Every random draw in a run comes from a generator keyed by
//! `(seed, purpose, index)`, so two runs that share a seed consume identical
//! randomness for the parts they have in common regardless of what else they
//! do (e.g. importance passes draw nothing).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ExtractorInit = 1,
    HeadInit = 2,
    Shuffle = 3,
    Data = 4,
    Prune = 5,
    Probe = 6,
    Split = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let k = splitmix64(splitmix64(splitmix64(seed) ^ purpose as u64) ^ index);
    ChaCha8Rng::seed_from_u64(k)
}

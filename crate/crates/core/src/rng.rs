//! Seed hierarchy: every module draws from a stream derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a stream label and an ordinal.
pub fn derive_seed(parent: u64, label: &str, ordinal: u64) -> u64 {
    let mut h = splitmix64(parent);
    for b in label.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h ^ ordinal)
}

pub fn stream(parent: u64, label: &str, ordinal: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(parent, label, ordinal))
}

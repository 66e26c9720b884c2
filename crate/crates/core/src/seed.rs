//! Per-stage seeds derived from one top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a hash of a role string.
pub fn role_hash(role: &str) -> u64 {
    role.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// `seed` combined with the role hash, then mixed (splitmix64 finalizer) so
/// nearby seeds give unrelated streams.
pub fn derive(seed: u64, role: &str) -> u64 {
    let mut z = seed.wrapping_add(role_hash(role)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(seed: u64, role: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, role))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_separate_streams() {
        assert_eq!(derive(7, "dataset/1"), derive(7, "dataset/1"));
        assert_ne!(derive(7, "dataset/1"), derive(7, "dataset/0"));
        assert_ne!(derive(7, "dataset/1"), derive(8, "dataset/1"));
        // FNV-1a reference value for the empty string and "a"
        assert_eq!(role_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(role_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }
}

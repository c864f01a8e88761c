//! Named sub-seeds derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over bytes; stable across platforms and toolchains.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn combine(seed: u64, value: u64) -> u64 {
    mix64(seed ^ mix64(value))
}

/// Sub-seed for a named consumer of randomness, e.g. `"hnsw"` or `"kmeans"`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    combine(seed, fnv1a64(name.as_bytes()))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn sub_seeds_differ_by_name() {
        assert_ne!(sub_seed(7, "hnsw"), sub_seed(7, "kmeans"));
        assert_eq!(sub_seed(7, "hnsw"), sub_seed(7, "hnsw"));
    }
}

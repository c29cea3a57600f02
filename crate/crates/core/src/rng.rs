//! Seed splitting.
//!
//! Every run has one master seed. Each pipeline stage derives its own
//! generator from `(master, stage tag, index)` so that, for example, changing
//! the strategy never perturbs data generation. The rule is SplitMix64 applied
//! to the master seed xor an FNV-1a hash of the tag, then mixed with the index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Derive a sub-seed for `tag` (and an ordinal, e.g. the experience id).
pub fn sub_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(tag)) ^ index)
}

/// Deterministic generator for a stage.
pub fn stage_rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_separate_streams() {
        assert_ne!(sub_seed(1, "data", 0), sub_seed(1, "init", 0));
        assert_ne!(sub_seed(1, "data", 0), sub_seed(1, "data", 1));
        assert_ne!(sub_seed(1, "data", 0), sub_seed(2, "data", 0));
        assert_eq!(sub_seed(7, "train", 3), sub_seed(7, "train", 3));
    }
}

//! Seeded random streams.
//!
//! Every random draw in the crate goes through a [`ChaCha8Rng`] created from
//! an explicit `u64` seed, so a seed triple fully determines a run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a parent seed and a label.
///
/// SplitMix64 finalizer over `seed ^ hash(label)`; stable across platforms.
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(seed ^ h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable_and_label_sensitive() {
        assert_eq!(derive(7, "init"), derive(7, "init"));
        assert_ne!(derive(7, "init"), derive(7, "sigma"));
        assert_ne!(derive(7, "init"), derive(8, "init"));
    }
}

//! Seed plumbing.
//!
//! Every source of randomness in a run (data generation, weight init,
//! batch sampling, reference sampling, augmentation) draws from its own
//! stream derived from one root seed, so components reproduce
//! independently of each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Derives a child seed from `(root, tag)`. Stable across runs and
/// platforms: FNV-1a over the tag, then a splitmix64 finalizer.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded stream for one named consumer.
pub fn stream(root: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(root, tag))
}

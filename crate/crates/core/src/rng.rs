//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from a [`ChaCha8Rng`] seeded by
//! `derive_seed(master, tag, index)`. Streams are independent by construction,
//! so e.g. labeled-batch sampling at step `k` never depends on whether the
//! unsupervised branch consumed randomness. This is what makes interrupted
//! runs resumable with an identical trajectory: step `k` always re-derives the
//! same seeds regardless of process history.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit mix (splitmix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a stream tag and an index.
///
/// FNV-1a over the tag bytes folded with the master seed and index, then
/// finalized with splitmix64. Stable across platforms and releases.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(master ^ mix(h ^ mix(index)))
}

/// RNG for a derived stream.
pub fn stream_rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

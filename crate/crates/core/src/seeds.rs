//! Deterministic seed derivation.
//!
//! Every randomized stage of the pipeline (weight init, dropout, point
//! subsampling, scene synthesis, shuffling) draws from a ChaCha stream seeded
//! through this helper, so one top-level seed pins the whole run.

/// Derive a child seed from a base seed, a stream tag and an index.
///
/// FNV-1a over the tag bytes mixed with the base and index; stable across
/// platforms and releases of this crate.
pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    for b in index.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche (splitmix64 tail)
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

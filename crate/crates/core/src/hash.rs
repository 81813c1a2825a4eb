//! Counter-based deterministic randomness. Every random draw in the crate is
//! a pure function of its keys, so results never depend on scheduling.

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an ordered tuple of keys.
#[inline]
pub fn hash_keys(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x6a09_e667_f3bc_c908, |h, &k| splitmix64(h ^ splitmix64(k)))
}

/// Map a hash to a uniform deviate in the open interval (0, 1).
#[inline]
pub fn unit_open(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Uniform deviate in (0, 1) keyed by `keys`.
#[inline]
pub fn uniform(keys: &[u64]) -> f64 {
    unit_open(hash_keys(keys))
}

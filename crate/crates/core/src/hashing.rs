//! Stable 64-bit hashing.
//!
//! `std`'s `DefaultHasher` is not guaranteed stable across releases, and
//! signatures and simulated scores are persisted, so everything that ends up
//! on disk goes through these functions instead.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer (Steele, Lea & Flood). Full avalanche on 64 bits.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes, finalized with [`mix64`].
#[inline]
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(h)
}

/// Hash of a string salted with a seed.
pub fn hash_str_seeded(text: &str, seed: u64) -> u64 {
    mix64(hash_bytes(text.as_bytes()) ^ mix64(seed))
}

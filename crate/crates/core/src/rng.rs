//! Seed derivation for reproducible, splittable random streams.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Mixes a 64-bit value (splitmix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed, a label, and an index.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(master ^ mix(h) ^ mix(index.wrapping_add(0x51ed_270b)))
}

/// Builds a platform-stable RNG for a derived stream.
pub fn stream_rng(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}

//! Seed derivation for reproducible per-item random streams.
//!
//! Every random choice in the pipeline is drawn from a ChaCha8 stream whose
//! seed is derived from the run seed plus stable string keys (query ids,
//! doc ids). The mixing function is FNV-1a followed by a splitmix64
//! finalizer, so derived seeds are identical across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with a sequence of string keys into a new 64-bit seed.
pub fn derive_seed(base: u64, keys: &[&str]) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(base);
    for key in keys {
        for byte in key.bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(FNV_PRIME);
        }
        // key separator so ["ab", "c"] and ["a", "bc"] differ
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

pub fn rng_for(base: u64, keys: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, keys))
}

//! Deterministic derivation of per-component random streams.
//!
//! Every randomized piece of the pipeline (corpus synthesis, fold
//! shuffling, parameter initialization, dropout masks, perturbation
//! sampling) owns a named stream derived from the user's master seed, a
//! component name, and integer indices. Streams are independent of one
//! another, reproducible across platforms, and insensitive to how many
//! draws other components make.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a master seed, a stream name, and indices into a single 64-bit
/// seed using FNV-1a hashing followed by splitmix64 finalization.
pub fn mix(master: u64, stream: &str, indices: &[u64]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut h = FNV_OFFSET;
    let mut absorb = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    absorb(&master.to_le_bytes());
    absorb(stream.as_bytes());
    for &i in indices {
        absorb(&i.to_le_bytes());
    }
    splitmix64(h)
}

/// Counter-based generator for the given stream.
pub fn rng(master: u64, stream: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, stream, indices))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

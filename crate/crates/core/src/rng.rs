//! Seed derivation and stream splitting.
//!
//! Every randomized operation in this crate is a pure function of its inputs
//! and a 64-bit seed. Seeds are expanded into independent streams with the
//! SplitMix64 finalizer (Steele, Lea & Flood, 2014) and labels are folded in
//! with FNV-1a, so a reimplementation in another language can match streams
//! exactly:
//!
//! * `derive_seed(master, label)  = sm64(master XOR fnv1a64(label))`
//! * `derive_stream(seed, index)  = sm64(seed XOR sm64(index))`
//! * generators are ChaCha12, keyed via `seed_from_u64` from the `rand_chacha`
//!   crate.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const SM64_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// SplitMix64 output function: one full increment-and-finalize step applied
/// to `x` as the generator state.
pub fn sm64(x: u64) -> u64 {
    let mut z = x.wrapping_add(SM64_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// FNV-1a over the IEEE-754 little-endian bit patterns of `values`.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h = FNV_OFFSET;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Stage seed for a named pipeline stage.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    sm64(master ^ fnv1a64(label.as_bytes()))
}

/// Per-item stream seed within a stage.
pub fn derive_stream(seed: u64, index: u64) -> u64 {
    sm64(seed ^ sm64(index))
}

/// The crate's generator, keyed by a 64-bit seed.
pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

//! Labeled, reproducible random streams.
//!
//! Every run derives independent streams (`"policy"`, `"env"`, `"oracle"`, ...)
//! from the task seed, so the order in which tasks or workers execute never
//! changes a draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const POLICY: &str = "policy";
pub const ENV: &str = "env";
pub const ORACLE: &str = "oracle";

/// FNV-1a, stable across platforms and releases.
pub fn label_hash(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

pub fn stream(seed: u64, label: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}

/// Sub-stream `index` of a labeled stream (e.g. one per Monte-Carlo shard).
pub fn substream(seed: u64, label: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, index));
    rng.set_stream(label_hash(label));
    rng
}

/// SplitMix64 finalizer over `(a, b)`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform `[0, 1)` derived from a hash, for history-keyed coin flips.
pub fn unit_from_hash(hash: u64) -> f64 {
    (hash >> 11) as f64 / (1u64 << 53) as f64
}

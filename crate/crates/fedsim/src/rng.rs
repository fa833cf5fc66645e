//! Deterministic random-stream derivation.
//!
//! Every stochastic step in the simulator draws from its own ChaCha12
//! stream derived from the master seed plus a context label (stream kind,
//! round, task id, hashed device id). Streams are independent of execution
//! order, which is what makes task generation and client updates safe to
//! run on any number of worker threads without changing a single byte of
//! output.
//!
//! Gaussian draws use `rand_distr::StandardNormal` (ziggurat). The sampler
//! and the ChaCha stream are pinned by `Cargo.lock`, so identical seeds
//! reproduce identical datasets per release.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Context labels separating the derivation domains. The label is always
/// the first tag fed to [`derive_rng`].
pub mod stream {
    pub const POPULATION: u64 = 0x01;
    pub const TASK: u64 = 0x02;
    pub const SPLIT: u64 = 0x03;
    pub const SUBSAMPLE: u64 = 0x04;
    pub const MIX: u64 = 0x05;
    pub const SELECT: u64 = 0x06;
    pub const CLIENT: u64 = 0x07;
    pub const INIT: u64 = 0x08;
    pub const EVAL: u64 = 0x09;
    pub const LOCAL: u64 = 0x0a;
    pub const GLOBAL_IID: u64 = 0x0b;
    pub const FINETUNE: u64 = 0x0c;
    pub const DATASET: u64 = 0x0d;
}

// splitmix64 finalizer; bijective on u64.
fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha12 stream from `(master_seed, tags...)`.
pub fn derive_rng(master_seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut state = mix(master_seed);
    for &tag in tags {
        state = mix(state ^ tag);
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix(state ^ i as u64).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Stable 64-bit hash of a device id (FNV-1a). Used to fold string ids
/// into stream tags; stable across platforms and releases.
pub fn hash_id(id: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in id.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

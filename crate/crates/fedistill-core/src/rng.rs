//! Seed derivation and generator construction.
//!
//! One master seed drives an entire run. Every independent consumer
//! (model init, client k in round e, a distillation sweep, repetition r)
//! derives its own seed with [`derive_seed`], so results do not depend on
//! the order in which consumers happen to execute — local training of
//! client 3 draws the same stream whether it runs before or after
//! client 2.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping derived seeds for distinct purposes disjoint.
pub mod stream {
    /// Global model weight initialization.
    pub const INIT: u64 = 0x01;
    /// Local training of (client, round) during federated averaging.
    pub const LOCAL: u64 = 0x02;
    /// Per-client distillation sweep.
    pub const DISTILL: u64 = 0x03;
    /// Data splitting.
    pub const SPLIT: u64 = 0x04;
    /// Repetition of a full experiment.
    pub const REPETITION: u64 = 0x05;
    /// Synthetic data generation.
    pub const SYNTH: u64 = 0x06;
    /// Train/val/test partition of one client's indices.
    pub const PARTITION: u64 = 0x07;
}

/// splitmix64 finalizer; full-avalanche mixing of one 64-bit word.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a tag path, e.g.
/// `derive_seed(seed, &[stream::LOCAL, client as u64, round as u64])`.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = mix(root);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// Deterministic generator for a derived seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

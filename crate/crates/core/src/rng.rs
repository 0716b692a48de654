//! Deterministic random-number provisioning.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream derived
//! from `(seed, stream_id)`. ChaCha is counter based, so separate streams
//! never overlap and a parallel rollout worker produces the same draws no
//! matter which thread runs it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named stream families. Indexed streams (one per environment, one per
/// trial) are formed with [`stream_id`].
pub mod stream {
    pub const ENV: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const EVAL_ENV: u64 = 4;
    pub const EVAL_POLICY: u64 = 5;
    pub const INIT: u64 = 6;
    pub const CLUSTER: u64 = 7;
    pub const SESSION_ENV: u64 = 8;
    pub const SESSION_POLICY: u64 = 9;
    pub const EVAL_CLUSTER: u64 = 10;
    pub const SESSION_CLUSTER: u64 = 11;
}

/// Combine a stream family with an index (environment number, trial...).
pub const fn stream_id(family: u64, index: u64) -> u64 {
    (family << 32) | (index & 0xffff_ffff)
}

/// Owned generator handle. Cloning forks the exact state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngHandle(ChaCha8Rng);

/// Build the generator for `(seed, stream_id)`.
pub fn make_rng(seed: u64, stream_id: u64) -> RngHandle {
    let mut inner = ChaCha8Rng::seed_from_u64(seed);
    inner.set_stream(stream_id);
    RngHandle(inner)
}

impl RngHandle {
    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform draw on `[lo, hi]` (closed up to rounding).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

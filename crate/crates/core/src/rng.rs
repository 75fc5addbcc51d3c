//! Counter-based random number generation.
//!
//! Draw `i` of a stream is a pure function of `(seed, i)`: the SplitMix64
//! output permutation applied to `seed + i * GOLDEN`. There is no hidden
//! state beyond the counter, so a stream can be checkpointed by storing two
//! u64s and identical `(seed, counter)` pairs produce identical samples on
//! every platform.
//!
//! Gaussians come from Box-Muller and always consume exactly two u64 draws;
//! the second variate of the pair is discarded rather than cached so the
//! counter advance per sample is fixed.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Explicit-state RNG: `seed` names the stream, `counter` is the position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    /// Rebuild a stream at a saved position.
    pub fn from_parts(seed: u64, counter: u64) -> Self {
        RngState { seed, counter }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1), 53 mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes exactly two u64 draws.
    pub fn next_gaussian(&mut self) -> f64 {
        // 1 - u lies in (0, 1], keeping the log argument away from zero.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform in [0, bound). Multiply-shift map; the bias is below 2^-53
    /// of the range, irrelevant at the bounds used here.
    pub fn next_below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "next_below requires a positive bound");
        (((self.next_u64() as u128) * (bound as u128)) >> 64) as usize
    }

    /// Fisher-Yates shuffle with draws from this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

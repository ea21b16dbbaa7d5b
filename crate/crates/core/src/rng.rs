//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by a key tuple rather than by
//! the order in which a program happens to ask for numbers. A [`StreamKey`]
//! (master seed, purpose, two coordinates) selects a ChaCha12 key, a lane
//! selects the ChaCha stream id, and an index selects the position inside the
//! stream. Trials can therefore run on any number of threads, in any order,
//! and any single draw can be recomputed in isolation.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Distinct purposes never share keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Noise = 1,
    Graph = 2,
    Anchors = 3,
    InitialState = 4,
    Observations = 5,
    Bootstrap = 6,
    Tuning = 7,
    Audit = 8,
}

/// Key of a family of independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub major: u64,
    pub minor: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, major: u64, minor: u64) -> Self {
        Self {
            seed,
            purpose,
            major,
            minor,
        }
    }

    fn chacha_seed(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (chunk, word) in out.chunks_exact_mut(8).zip([
            self.seed,
            self.purpose as u64,
            self.major,
            self.minor,
        ]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        out
    }

    /// Opens lane `lane` of this key, positioned at index 0.
    pub fn stream(&self, lane: u64) -> RandomStream {
        let mut rng = ChaCha12Rng::from_seed(self.chacha_seed());
        rng.set_stream(lane);
        RandomStream { rng }
    }
}

/// A seekable stream of 64-bit words. Index `i` is the `i`-th `u64` of the lane.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha12Rng,
}

impl RandomStream {
    /// Moves the cursor so that the next draw is the `index`-th word.
    pub fn seek(&mut self, index: u64) {
        // two 32-bit ChaCha words per u64
        self.rng.set_word_pos(u128::from(index) * 2);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw on the open interval (0, 1); never returns 0 or 1.
    pub fn next_uniform(&mut self) -> f64 {
        open_unit(self.next_u64())
    }

    /// Uniform draw on [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn next_index(&mut self, n: usize) -> usize {
        // Lemire's multiply-shift; the bias is below 2^-32 for the sizes used here.
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn uniform_at(&mut self, index: u64) -> f64 {
        self.seek(index);
        self.next_uniform()
    }
}

/// Maps 52 random bits onto the midpoints of a 2^-52 grid inside (0, 1).
fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_draws_match_random_access() {
        let key = StreamKey::new(42, Purpose::Noise, 3, 9);
        let mut seq = key.stream(5);
        let draws: Vec<f64> = (0..100).map(|_| seq.next_uniform()).collect();
        let mut ra = key.stream(5);
        for idx in [77u64, 3, 0, 99, 41] {
            assert_eq!(ra.uniform_at(idx), draws[idx as usize]);
        }
    }

    #[test]
    fn distinct_keys_and_lanes_differ() {
        let a = StreamKey::new(1, Purpose::Noise, 0, 0).stream(0).next_u64();
        let b = StreamKey::new(1, Purpose::Noise, 0, 0).stream(1).next_u64();
        let c = StreamKey::new(1, Purpose::Graph, 0, 0).stream(0).next_u64();
        let d = StreamKey::new(2, Purpose::Noise, 0, 0).stream(0).next_u64();
        let e = StreamKey::new(1, Purpose::Noise, 0, 1).stream(0).next_u64();
        let all = [a, b, c, d, e];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn open_unit_stays_inside() {
        assert!(open_unit(0) > 0.0);
        assert!(open_unit(u64::MAX) < 1.0);
        assert_eq!(open_unit(1u64 << 63), 0.5 + 0.5 / (1u64 << 52) as f64);
        assert_eq!(open_unit(u64::MAX), 1.0 - 0.5 / (1u64 << 52) as f64);
    }

    #[test]
    fn next_index_in_range() {
        let mut s = StreamKey::new(0, Purpose::Audit, 0, 0).stream(0);
        for _ in 0..1000 {
            assert!(s.next_index(7) < 7);
        }
    }
}

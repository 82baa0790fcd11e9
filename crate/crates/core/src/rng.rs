//! Seeded randomness.
//!
//! Every random choice in the library is drawn from ChaCha8 (`rand_chacha`)
//! seeded through `SeedableRng::seed_from_u64`. Independent consumers within
//! one run use distinct ChaCha stream ids on the same seed, so e.g. changing
//! the dropout ratio never perturbs the epoch shuffle order.
//!
//! Shuffling is an explicit Fisher-Yates pass (last index down to 1) whose
//! bounded draws use rejection sampling on `next_u64`, so the permutation
//! for a given seed depends only on the ChaCha8 output stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used by the trainer.
pub mod stream {
    pub const SHUFFLE: u64 = 0;
    pub const DROPOUT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLING: u64 = 3;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform integer in `0..bound`. `bound` must be non-zero.
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below: zero bound");
    // largest multiple of `bound` not exceeding u64::MAX
    let limit = u64::MAX - u64::MAX % bound;
    loop {
        let x = rng.next_u64();
        if x < limit {
            return x % bound;
        }
    }
}

pub fn shuffle<T, R: RngCore + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

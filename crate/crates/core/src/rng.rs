//! Seed derivation and small sampling helpers.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] seeded from a `u64`.
//! Sub-seeds are derived by folding labels into the parent seed with the
//! splitmix64 finalizer, so that any cell of an experiment can be re-run in
//! isolation from `(master, repetition, phase, ...)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a sequence of labels.
pub fn derive_seed(parent: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(parent), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

/// Phase labels used with [`derive_seed`].
pub mod phase {
    pub const BEHAVIOR: u64 = 1;
    pub const COLLECT: u64 = 2;
    pub const SOLVE: u64 = 3;
    pub const EVAL: u64 = 4;
}

/// Draw an index from a discrete distribution given as dense probabilities.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// uniform draw above the cumulative sum.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

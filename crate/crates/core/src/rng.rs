//! Counter-based randomness.
//!
//! Every random draw is keyed by `(seed, stream, index)` instead of advancing a
//! shared generator, so results do not depend on evaluation order or on how
//! many other stages drew numbers before.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::GrayImage;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a list of words into one well-distributed 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243f_6a88_85a3_08d3u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Generator for draw number `index` of `stream` under `seed`.
pub fn counter_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, stream, index]))
}

/// Uniform noise image, handy for tests and examples.
pub fn seeded_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height).map(|_| rng.random::<f64>()).collect();
    GrayImage::new(width, height, data).expect("valid dimensions")
}

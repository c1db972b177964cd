//! Seed derivation and reproducible RNG state capture.
//!
//! Every stochastic stream in the crate is keyed by a splitmix-derived
//! seed so that runs are bit-reproducible and independent streams never
//! alias (training batches, latent noise, evaluation, held-out data).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Folds an ordered list of parts into one stream seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f6a8885a308d3u64; // pi fraction, arbitrary non-zero start
    for &p in parts {
        acc = splitmix(acc ^ p);
    }
    acc
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Captured generator state, sufficient to clone the stream position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

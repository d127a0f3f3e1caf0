//! Counter-style seed derivation.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose seed is a pure
//! function of `(master seed, purpose tag, index...)`, so results never
//! depend on which worker ran a given path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::field::SpectralField;
use crate::grid::GridSpec;

/// Purpose tags keep streams for different uses disjoint.
pub mod tag {
    pub const INITIAL_DATA: u64 = 0x1d;
    pub const WIENER: u64 = 0x3e;
    pub const CALIBRATION: u64 = 0xca;
    pub const AUDIT: u64 = 0xa0;
    pub const ENVELOPE_FIT: u64 = 0xef;
    pub const CHECKS: u64 = 0xc4;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a master seed and a path of indices into one 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// White Gaussian noise in physical space, transformed; mean and Nyquist
/// modes removed.
pub fn white_field(grid: GridSpec, components: usize, rng: &mut ChaCha8Rng) -> SpectralField {
    let phys: Vec<Vec<f64>> = (0..components)
        .map(|_| (0..grid.len()).map(|_| standard_normal(rng)).collect())
        .collect();
    SpectralField::from_physical(grid, &phys).expect("sizes match grid")
}

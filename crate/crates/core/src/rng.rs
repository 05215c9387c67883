//! Seeding and sampling helpers.
//!
//! All randomness flows through `ChaCha8Rng`. Independent streams (sweep cells,
//! Monte Carlo shards) get their own generator seeded from a base seed mixed
//! with the stream index, so results never depend on scheduling order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{norm, project_orthogonal, Embedding};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream at `(row, col)` under `base`.
pub fn derive_seed(base: u64, row: u64, col: u64) -> u64 {
    base ^ mix64(mix64(row) ^ col.rotate_left(32))
}

pub fn stream_rng(base: u64, row: u64, col: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, row, col))
}

/// `d` standard normal draws (ziggurat method from `rand_distr`).
pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform direction on the unit sphere in R^d, `d >= 2`.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Embedding {
    loop {
        let v = Embedding::new(gaussian_vec(rng, d)).expect("d >= 2 and finite");
        let n = norm(&v);
        if n > 1e-6 {
            return v.scaled(1.0 / n);
        }
    }
}

/// Random unit vector orthogonal to the unit vector `u`.
pub fn random_orthogonal_unit<R: Rng + ?Sized>(rng: &mut R, u: &Embedding) -> Embedding {
    loop {
        let v = Embedding::new(gaussian_vec(rng, u.dim())).expect("finite");
        let w = project_orthogonal(&v, u).expect("u is a unit vector");
        let n = norm(&w);
        if n > 1e-6 {
            return w.scaled(1.0 / n);
        }
    }
}

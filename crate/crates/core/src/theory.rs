//! Monte Carlo checks of the probabilistic claims: the Chebyshev tail bound
//! on the cosine similarity of Gaussian pairs, its first two moments, and
//! the opposite-halves rate of a set of positive pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::attraction_step;
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, pair_geometry, project_orthogonal, unit, Embedding};
use crate::rng::{gaussian_vec, stream_rng};

/// Samples per Monte Carlo shard. Shard boundaries are fixed so results do
/// not depend on the number of worker threads.
pub const SHARD_SIZE: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub d: usize,
    pub n_samples: u64,
    pub epsilon: f64,
    /// Fraction of pairs with `cos >= 1 - epsilon`.
    pub empirical_rate: f64,
    pub bound: f64,
    pub mean: f64,
    /// Unbiased (n - 1) sample variance.
    pub variance: f64,
}

impl TailCheck {
    pub fn within_bound(&self) -> bool {
        self.empirical_rate <= self.bound
    }
}

/// `P[cos(x_i, x_j) >= 1 - eps] <= 1 / (2 d (1 - eps)^2)` for i.i.d.
/// standard Gaussian `x_i, x_j` in R^d. Exceeds 1 (vacuous) in low dimension.
pub fn chebyshev_bound(d: usize, epsilon: f64) -> Result<f64> {
    if d < 1 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(1.0 / (2.0 * d as f64 * (1.0 - epsilon).powi(2)))
}

/// Streaming count, mean and sum of squared deviations, plus tail counts.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    tail: Vec<u64>,
}

impl Moments {
    fn new(n_thresholds: usize) -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            tail: vec![0; n_thresholds],
        }
    }

    fn push(&mut self, x: f64, thresholds: &[f64]) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        for (count, t) in self.tail.iter_mut().zip(thresholds) {
            if x >= *t {
                *count += 1;
            }
        }
    }

    /// Chan et al. pairwise combine.
    fn merge(mut self, other: &Moments) -> Moments {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other.clone();
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.mean += delta * other.n as f64 / n as f64;
        self.n = n;
        for (a, b) in self.tail.iter_mut().zip(&other.tail) {
            *a += b;
        }
        self
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

fn gaussian_cos(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> f64 {
    loop {
        let a = gaussian_vec(rng, d);
        let b = gaussian_vec(rng, d);
        let na = dot(&a, &a).sqrt();
        let nb = dot(&b, &b).sqrt();
        if na > 0.0 && nb > 0.0 {
            return (dot(&a, &b) / (na * nb)).clamp(-1.0, 1.0);
        }
    }
}

/// Draws `n_samples` i.i.d. Gaussian pairs in R^d and reports, for each
/// epsilon, the empirical rate of `cos >= 1 - epsilon` next to the Chebyshev
/// bound. Mean and variance are shared across the returned rows.
pub fn monte_carlo_cos_stats(
    d: usize,
    n_samples: u64,
    epsilons: &[f64],
    seed: u64,
) -> Result<Vec<TailCheck>> {
    if d < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
    }
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be >= 1".into()));
    }
    if epsilons.is_empty() {
        return Err(Error::EmptyInput);
    }
    let bounds = epsilons
        .iter()
        .map(|&eps| chebyshev_bound(d, eps))
        .collect::<Result<Vec<_>>>()?;
    let thresholds: Vec<f64> = epsilons.iter().map(|e| 1.0 - e).collect();

    let n_shards = n_samples.div_ceil(SHARD_SIZE);
    let shards: Vec<Moments> = (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let count = SHARD_SIZE.min(n_samples - shard * SHARD_SIZE);
            let mut rng = stream_rng(seed, shard, d as u64);
            let mut m = Moments::new(thresholds.len());
            for _ in 0..count {
                m.push(gaussian_cos(&mut rng, d), &thresholds);
            }
            m
        })
        .collect();
    let total = shards
        .iter()
        .fold(Moments::new(thresholds.len()), |acc, m| acc.merge(m));

    Ok(epsilons
        .iter()
        .zip(bounds)
        .zip(&total.tail)
        .map(|((&epsilon, bound), &count)| TailCheck {
            d,
            n_samples,
            epsilon,
            empirical_rate: count as f64 / n_samples as f64,
            bound,
            mean: total.mean,
            variance: total.variance(),
        })
        .collect())
}

/// Fraction of pairs whose angle exceeds `angle_threshold` (radians).
pub fn opposite_halves_rate(pairs: &[(Embedding, Embedding)], angle_threshold: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut count = 0usize;
    for (a, b) in pairs {
        if pair_geometry(a, b)?.phi > angle_threshold {
            count += 1;
        }
    }
    Ok(count as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormGrowthCheck {
    /// `|z_i'|^2` after one attraction step.
    pub lhs: f64,
    /// `|z_i|^2 + (gamma^2 / |z_i|^2) |(z^_j)_{perp z_i}|^2`
    pub rhs: f64,
    pub holds: bool,
}

/// Compares the squared norm after an attraction step with the Pythagorean
/// prediction.
pub fn check_norm_growth_identity(
    z_i: &Embedding,
    z_j: &Embedding,
    gamma: f64,
) -> Result<NormGrowthCheck> {
    let (next, _) = attraction_step(z_i, z_j, gamma)?;
    let lhs = dot(next.as_slice(), next.as_slice());
    let n2 = dot(z_i.as_slice(), z_i.as_slice());
    let perp = norm(&project_orthogonal(&unit(z_j)?, z_i)?);
    let rhs = n2 + gamma * gamma / n2 * perp * perp;
    Ok(NormGrowthCheck {
        lhs,
        rhs,
        holds: (lhs - rhs).abs() <= 1e-12 * lhs.max(1.0),
    })
}

//! Vector primitives shared by every other module.
//!
//! Everything here is a pure function over double-precision vectors. Operations
//! that divide by a norm refuse to run when that norm is at or below
//! [`ZERO_NORM_GUARD`].

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this value are treated as degenerate.
pub const ZERO_NORM_GUARD: f64 = 1e-12;

/// A point in R^d with d >= 2 and finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DimensionTooSmall(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(self)
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dims(self, other)?;
        Ok(dot(&self.0, &other.0))
    }

    /// `self * c`
    pub fn scaled(&self, c: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * c).collect())
    }

    /// `self + c * other`
    pub fn add_scaled(&self, c: f64, other: &Embedding) -> Result<Embedding> {
        check_dims(self, other)?;
        Ok(Embedding(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + c * b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Embedding) -> Result<Embedding> {
        self.add_scaled(-1.0, other)
    }
}

impl Index<usize> for Embedding {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Vec<f64> {
        e.0
    }
}

/// Angle, cosine and norms of a pair of embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry {
    pub cos: f64,
    /// Radians in `[0, pi]`.
    pub phi: f64,
    pub norm_i: f64,
    pub norm_j: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

pub(crate) fn guarded_norm(v: &Embedding) -> Result<f64> {
    let n = norm(v);
    if n <= ZERO_NORM_GUARD {
        return Err(Error::ZeroNorm { norm: n });
    }
    Ok(n)
}

/// Euclidean norm.
pub fn norm(v: &Embedding) -> f64 {
    dot(&v.0, &v.0).sqrt()
}

/// Unit vector parallel to `v`.
pub fn unit(v: &Embedding) -> Result<Embedding> {
    let n = guarded_norm(v)?;
    Ok(v.scaled(1.0 / n))
}

/// Component of `a` orthogonal to `b`: `a - (a.b / |b|^2) b`.
pub fn project_orthogonal(a: &Embedding, b: &Embedding) -> Result<Embedding> {
    check_dims(a, b)?;
    let nb = guarded_norm(b)?;
    let coef = dot(&a.0, &b.0) / (nb * nb);
    a.add_scaled(-coef, b)
}

/// Cosine of the angle between `a` and `b`, clamped into `[-1, 1]`.
pub(crate) fn clamped_cos(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    let na = guarded_norm(a)?;
    let nb = guarded_norm(b)?;
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn pair_geometry(z_i: &Embedding, z_j: &Embedding) -> Result<PairGeometry> {
    let cos = clamped_cos(z_i, z_j)?;
    Ok(PairGeometry {
        cos,
        phi: cos.acos(),
        norm_i: norm(z_i),
        norm_j: norm(z_j),
    })
}

/// Angle between two vectors via `2 atan2(|a^ - b^|, |a^ + b^|)`, which stays
/// accurate near 0 and pi where `acos` loses digits.
pub(crate) fn stable_angle(a: &Embedding, b: &Embedding) -> Result<f64> {
    let ua = unit(a)?;
    let ub = unit(b)?;
    let diff = norm(&ua.sub(&ub)?);
    let sum = norm(&ua.add_scaled(1.0, &ub)?);
    Ok(2.0 * diff.atan2(sum))
}

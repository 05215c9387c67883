//! Numerical laboratory for the gradient dynamics of the cosine similarity and
//! InfoNCE losses.
//!
//! - [`geometry`]: norms, unit vectors, projections, pair angles.
//! - [`losses`]: loss values, analytic gradients and a finite-difference oracle.
//! - [`dynamics`]: gradient steps on raw point pairs and the convergence sweep.
//! - [`theory`]: Monte Carlo checks of the cosine-similarity tail bound and the
//!   opposite-halves rate.
//! - [`toynet`]: a small self-supervised MLP pipeline trained on synthetic data.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod rng;
pub mod theory;
pub mod toynet;

pub use error::{Error, Result};
pub use geometry::{Embedding, PairGeometry, ZERO_NORM_GUARD};

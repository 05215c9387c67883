//! Gradient ascent on the cosine similarity of raw point pairs.
//!
//! A step moves `z_i` by `(gamma / |z_i|) (z^_j)_{perp z_i}`, which is
//! `gamma * grad_cos_sim(z_i, z_j)`. Nothing renormalizes the points between
//! steps, so their norms grow and later steps get smaller.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    guarded_norm, norm, pair_geometry, project_orthogonal, stable_angle, unit, Embedding,
    ZERO_NORM_GUARD,
};
use crate::losses::cos_sim;
use crate::rng::{random_orthogonal_unit, random_unit, stream_rng};

/// Relative tolerance on `|z_i| == |z_j|` for [`symmetric_step`].
pub const EQUAL_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractionDiagnostics {
    /// `(z^_j)_{perp z_i}`
    pub delta: Embedding,
    pub norm_before: f64,
    pub norm_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub delta_ij: Embedding,
    pub delta_ji: Embedding,
    /// Angle between `delta_ij` and `delta_ji`. Set to `pi - phi` when the
    /// pair is collinear and both deltas vanish.
    pub psi: f64,
    pub phi: f64,
    pub norm_before_i: f64,
    pub norm_before_j: f64,
    pub norm_after_i: f64,
    pub norm_after_j: f64,
    /// `cos(z_i', z_j') - cos(z_i, z_j)`
    pub dcos: f64,
    /// `2 gamma sin^2(phi) / rho^2`
    pub bound: f64,
}

impl StepDiagnostics {
    /// Strict `dcos < bound`, relaxed to `<=` when `sin(phi)` is zero and
    /// both sides vanish.
    pub fn within_bound(&self) -> bool {
        if self.bound == 0.0 {
            self.dcos <= 0.0
        } else {
            self.dcos < self.bound
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Only `z_i` moves; `z_j` is behind a stop-gradient.
    OneSided,
    /// Both points move toward each other from their pre-step positions.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub steps: u64,
    pub converged: bool,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!(
            "learning rate must be > 0, got {gamma}"
        )));
    }
    Ok(())
}

/// `z_i + (gamma / |z_i|) delta`, returning the new point and `delta`.
fn pull(z_i: &Embedding, z_j: &Embedding, gamma: f64) -> Result<(Embedding, Embedding, f64)> {
    let n = guarded_norm(z_i)?;
    let delta = project_orthogonal(&unit(z_j)?, z_i)?;
    Ok((z_i.add_scaled(gamma / n, &delta)?, delta, n))
}

/// One-sided step on `z_i` toward `z_j`.
pub fn attraction_step(
    z_i: &Embedding,
    z_j: &Embedding,
    gamma: f64,
) -> Result<(Embedding, AttractionDiagnostics)> {
    check_gamma(gamma)?;
    let (next, delta, norm_before) = pull(z_i, z_j, gamma)?;
    let norm_after = norm(&next);
    Ok((
        next,
        AttractionDiagnostics {
            delta,
            norm_before,
            norm_after,
        },
    ))
}

/// Both points step toward each other. Requires equal norms.
pub fn symmetric_step(
    z_i: &Embedding,
    z_j: &Embedding,
    gamma: f64,
) -> Result<(Embedding, Embedding, StepDiagnostics)> {
    check_gamma(gamma)?;
    let geo = pair_geometry(z_i, z_j)?;
    if (geo.norm_i - geo.norm_j).abs() > EQUAL_NORM_TOL * geo.norm_i.max(geo.norm_j) {
        return Err(Error::UnequalNorms {
            norm_i: geo.norm_i,
            norm_j: geo.norm_j,
        });
    }
    let (next_i, delta_ij, _) = pull(z_i, z_j, gamma)?;
    let (next_j, delta_ji, _) = pull(z_j, z_i, gamma)?;

    let psi = if norm(&delta_ij) > ZERO_NORM_GUARD && norm(&delta_ji) > ZERO_NORM_GUARD {
        stable_angle(&delta_ij, &delta_ji)?
    } else {
        PI - geo.phi
    };
    let rho = geo.norm_i;
    let sin_phi = geo.phi.sin();
    let diag = StepDiagnostics {
        psi,
        phi: geo.phi,
        norm_before_i: geo.norm_i,
        norm_before_j: geo.norm_j,
        norm_after_i: norm(&next_i),
        norm_after_j: norm(&next_j),
        dcos: cos_sim(&next_i, &next_j)? - geo.cos,
        bound: 2.0 * gamma * sin_phi * sin_phi / (rho * rho),
        delta_ij,
        delta_ji,
    };
    Ok((next_i, next_j, diag))
}

fn mean_cos(pairs: &[(Embedding, Embedding)]) -> Result<f64> {
    let mut total = 0.0;
    for (a, b) in pairs {
        total += cos_sim(a, b)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Steps every pair until the mean cosine similarity exceeds `threshold` or
/// `max_iters` steps have run. Pairs are updated in place.
///
/// Symmetric mode scales each point's step by its own norm, so it also runs
/// on pairs whose norms differ.
pub fn run_until_converged(
    pairs: &mut [(Embedding, Embedding)],
    gamma: f64,
    threshold: f64,
    max_iters: u64,
    mode: StepMode,
) -> Result<Convergence> {
    check_gamma(gamma)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if threshold.is_nan() || threshold >= 1.0 {
        return Err(Error::Domain(format!(
            "threshold must be < 1, got {threshold}"
        )));
    }
    let mut steps = 0;
    loop {
        if mean_cos(pairs)? > threshold {
            return Ok(Convergence {
                steps,
                converged: true,
            });
        }
        if steps >= max_iters {
            return Ok(Convergence {
                steps,
                converged: false,
            });
        }
        for (a, b) in pairs.iter_mut() {
            match mode {
                StepMode::OneSided => {
                    *a = pull(a, b, gamma)?.0;
                }
                StepMode::Symmetric => {
                    let next_a = pull(a, b, gamma)?.0;
                    let next_b = pull(b, a, gamma)?.0;
                    *a = next_a;
                    *b = next_b;
                }
            }
        }
        steps += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dim: usize,
    pub n_pairs: usize,
    pub gamma: f64,
    pub threshold: f64,
    pub max_iters: u64,
    pub rho_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            n_pairs: 500,
            gamma: 0.1,
            threshold: 0.999,
            max_iters: 1_000_000,
            rho_grid: vec![1.0, 10.0],
            phi_grid: vec![PI / 2.0],
            seed: 42,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim < 2 {
            return bad(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.threshold > -1.0 && self.threshold < 1.0) {
            return bad(format!(
                "threshold must lie in (-1, 1), got {}",
                self.threshold
            ));
        }
        if self.rho_grid.is_empty() || self.phi_grid.is_empty() {
            return bad("rho and phi grids must be non-empty".into());
        }
        if let Some(r) = self
            .rho_grid
            .iter()
            .find(|r| !(**r > ZERO_NORM_GUARD && r.is_finite()))
        {
            return bad(format!("rho values must be > {ZERO_NORM_GUARD:e}, got {r}"));
        }
        if let Some(p) = self.phi_grid.iter().find(|p| !(**p > 0.0 && **p < PI)) {
            return bad(format!("phi values must lie in (0, pi), got {p}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rho: f64,
    pub phi: f64,
    pub steps: u64,
    pub converged: bool,
}

/// `n` pairs with norms exactly `rho` and angle exactly `phi`, randomly
/// oriented: `z_i = rho u`, `z_j = rho (cos(phi) u + sin(phi) w)` with `w`
/// a random unit vector orthogonal to `u`.
pub fn sample_pairs<R: rand::Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    n: usize,
    rho: f64,
    phi: f64,
) -> Vec<(Embedding, Embedding)> {
    (0..n)
        .map(|_| {
            let u = random_unit(rng, dim);
            let w = random_orthogonal_unit(rng, &u);
            let zj = u
                .scaled(phi.cos())
                .add_scaled(phi.sin(), &w)
                .expect("same dim")
                .scaled(rho);
            (u.scaled(rho), zj)
        })
        .collect()
}

/// Steps-to-convergence over the `rho x phi` grid, row-major in `rho`. Cells
/// are independent and run in parallel; each draws from its own stream
/// derived from `(seed, row, col)`.
pub fn sweep_convergence(cfg: &SweepConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.rho_grid.len())
        .flat_map(|r| (0..cfg.phi_grid.len()).map(move |c| (r, c)))
        .collect();
    cells
        .par_iter()
        .map(|&(row, col)| {
            let rho = cfg.rho_grid[row];
            let phi = cfg.phi_grid[col];
            let mut rng = stream_rng(cfg.seed, row as u64, col as u64);
            let mut pairs = sample_pairs(&mut rng, cfg.dim, cfg.n_pairs, rho, phi);
            let out = run_until_converged(
                &mut pairs,
                cfg.gamma,
                cfg.threshold,
                cfg.max_iters,
                StepMode::Symmetric,
            )?;
            Ok(SweepCell {
                rho,
                phi,
                steps: out.steps,
                converged: out.converged,
            })
        })
        .collect()
}

/// Random equal-norm configurations for checking `dcos < 2 gamma sin^2(phi) / rho^2`.
/// `rho` is log-uniform on `[rho_min, rho_max]`, `phi` uniform on
/// `(phi_min, phi_max)` and `gamma` uniform on `(0, rho^2]`. With `collinear`
/// set, even trials use `z_j = z_i` and odd trials `z_j = -z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckConfig {
    pub trials: usize,
    pub dim: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub collinear: bool,
    pub seed: u64,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            dim: 20,
            rho_min: 0.1,
            rho_max: 100.0,
            phi_min: 0.01,
            phi_max: PI - 0.01,
            collinear: false,
            seed: 42,
        }
    }
}

impl BoundCheckConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.dim < 2 {
            return bad(format!("dim must be >= 2, got {}", self.dim));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= self.rho_max && self.rho_max.is_finite()) {
            return bad(format!(
                "need 0 < rho_min <= rho_max, got [{}, {}]",
                self.rho_min, self.rho_max
            ));
        }
        if !(0.0 <= self.phi_min && self.phi_min <= self.phi_max && self.phi_max <= PI) {
            return bad(format!(
                "need 0 <= phi_min <= phi_max <= pi, got [{}, {}]",
                self.phi_min, self.phi_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTrial {
    pub rho: f64,
    pub phi: f64,
    pub gamma: f64,
    pub dcos: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `dcos / bound` over trials with a positive bound.
    pub max_ratio: f64,
    pub smallest_violating_phi: Option<f64>,
    pub first_violation: Option<BoundTrial>,
}

/// Runs [`symmetric_step`] on sampled configurations and counts bound
/// violations. Sequential and deterministic in `cfg.seed`.
pub fn check_step_bound(cfg: &BoundCheckConfig) -> Result<BoundCheckReport> {
    use rand::Rng;
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0, 0);
    let mut report = BoundCheckReport {
        trials: cfg.trials,
        violations: 0,
        max_ratio: 0.0,
        smallest_violating_phi: None,
        first_violation: None,
    };
    let (lo, hi) = (cfg.rho_min.ln(), cfg.rho_max.ln());
    for t in 0..cfg.trials {
        let rho = if lo == hi {
            cfg.rho_min
        } else {
            rng.random_range(lo..=hi).exp()
        };
        let gamma = (1.0 - rng.random::<f64>()) * rho * rho;
        let (zi, zj) = if cfg.collinear {
            let u = random_unit(&mut rng, cfg.dim).scaled(rho);
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            let v = u.scaled(sign);
            (u, v)
        } else {
            let phi = if cfg.phi_min == cfg.phi_max {
                cfg.phi_min
            } else {
                rng.random_range(cfg.phi_min..cfg.phi_max)
            };
            sample_pairs(&mut rng, cfg.dim, 1, rho, phi).remove(0)
        };
        let (_, _, d) = symmetric_step(&zi, &zj, gamma)?;
        if d.bound > 0.0 {
            report.max_ratio = report.max_ratio.max(d.dcos / d.bound);
        }
        if !d.within_bound() {
            report.violations += 1;
            report.smallest_violating_phi = Some(
                report
                    .smallest_violating_phi
                    .map_or(d.phi, |p| p.min(d.phi)),
            );
            report.first_violation.get_or_insert(BoundTrial {
                rho,
                phi: d.phi,
                gamma,
                dcos: d.dcos,
                bound: d.bound,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    /// Equal-norm symmetric dynamics reduced to the scalars (rho^2, cos):
    /// rho'^2 = rho^2 + gamma^2 s^2 / rho^2,
    /// cos'   = (rho^2 c + 2 gamma s^2 - gamma^2 s^2 c / rho^2) / rho'^2.
    fn scalar_steps(rho: f64, phi: f64, gamma: f64, threshold: f64, max_iters: u64) -> (u64, bool) {
        let mut r2 = rho * rho;
        let mut c = phi.cos();
        let mut n = 0;
        while c <= threshold {
            if n >= max_iters {
                return (n, false);
            }
            let s2 = 1.0 - c * c;
            let r2n = r2 + gamma * gamma * s2 / r2;
            c = (r2 * c + 2.0 * gamma * s2 - gamma * gamma * s2 * c / r2) / r2n;
            r2 = r2n;
            n += 1;
        }
        (n, true)
    }

    #[test]
    fn attraction_step_examples() {
        let (z, d) = attraction_step(&e(&[1.0, 0.0]), &e(&[0.0, 1.0]), 1.0).unwrap();
        assert_eq!(z, e(&[1.0, 1.0]));
        assert!((d.norm_after - 2f64.sqrt()).abs() < 1e-15);

        let (z, _) = attraction_step(&e(&[2.0, 1.0]), &e(&[4.0, 2.0]), 0.7).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);

        let (z, d) = attraction_step(&e(&[2.0, 0.0]), &e(&[0.0, 1.0]), 1.0).unwrap();
        assert_eq!(z, e(&[2.0, 0.5]));
        let rhs = 4.0 + 1.0 / 4.0 * norm(&d.delta).powi(2);
        assert!((d.norm_after.powi(2) - rhs).abs() < 1e-12);

        assert!(matches!(
            attraction_step(&e(&[1.0, 0.0]), &e(&[0.0, 1.0]), 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn symmetric_step_examples() {
        let (_, _, d) = symmetric_step(&e(&[1.0, 0.0]), &e(&[0.0, 1.0]), 0.1).unwrap();
        assert!((d.bound - 0.2).abs() < 1e-15);
        assert!(d.dcos < 0.2 && d.dcos > 0.0);
        assert!((d.psi - FRAC_PI_2).abs() < 1e-12);

        let (a, b, d) = symmetric_step(&e(&[0.0, 3.0]), &e(&[0.0, 3.0]), 0.5).unwrap();
        assert_eq!((d.dcos, d.bound), (0.0, 0.0));
        assert_eq!(a, e(&[0.0, 3.0]));
        assert_eq!(b, e(&[0.0, 3.0]));
        assert!(d.within_bound());

        let (_, _, d) = symmetric_step(&e(&[10.0, 0.0]), &e(&[0.0, 10.0]), 0.1).unwrap();
        assert!((d.bound - 0.002).abs() < 1e-15);
        assert!(d.dcos < 0.002);

        assert!(matches!(
            symmetric_step(&e(&[1.0, 0.0]), &e(&[0.0, 2.0]), 0.1),
            Err(Error::UnequalNorms { .. })
        ));
    }

    #[test]
    fn symmetric_step_matches_scalar_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let rho = rng.random_range(0.1..10.0);
            let phi = rng.random_range(0.01..PI - 0.01);
            let gamma = rng.random_range(0.001..1.0) * rho * rho;
            let pair = &sample_pairs(&mut rng, 7, 1, rho, phi)[0];
            let (_, _, d) = symmetric_step(&pair.0, &pair.1, gamma).unwrap();
            let (c, s2, r2) = (phi.cos(), phi.sin().powi(2), rho * rho);
            let exact = 2.0 * gamma * s2 * (1.0 - c * gamma / r2) / (r2 + gamma * gamma * s2 / r2);
            assert!((d.dcos - exact).abs() < 1e-10, "{} vs {}", d.dcos, exact);
        }
    }

    #[test]
    fn bound_holds_for_acute_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let rho = rng.random_range(0.1..100.0);
            let phi = rng.random_range(0.01..FRAC_PI_2);
            let gamma = rng.random_range(0.0..1.0_f64).max(1e-9) * rho * rho;
            let pair = &sample_pairs(&mut rng, 5, 1, rho, phi)[0];
            let (_, _, d) = symmetric_step(&pair.0, &pair.1, gamma).unwrap();
            assert!(
                d.within_bound(),
                "rho={rho} phi={phi} gamma={gamma}: {} vs {}",
                d.dcos,
                d.bound
            );
        }
    }

    #[test]
    fn bound_fails_for_obtuse_angles_with_small_steps() {
        // cos(phi) < 0 and gamma sin^2(phi) / rho^2 < -cos(phi) puts dcos above the bound.
        let (_, _, d) =
            symmetric_step(&e(&[1.0, 0.0]), &e(&[2.5f64.cos(), 2.5f64.sin()]), 0.1).unwrap();
        assert!(d.dcos > d.bound);
    }

    #[test]
    fn step_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..2_000 {
            let rho = rng.random_range(0.1..100.0);
            let phi = rng.random_range(0.01..PI - 0.01);
            let gamma = rng.random_range(1e-6..1.0) * rho * rho;
            let pair = &sample_pairs(&mut rng, 16, 1, rho, phi)[0];
            let (_, _, d) = symmetric_step(&pair.0, &pair.1, gamma).unwrap();
            assert!((d.psi - (PI - d.phi)).abs() < 1e-10);
            assert!(d.norm_after_i >= d.norm_before_i && d.norm_after_j >= d.norm_before_j);
            let rhs = d.norm_before_i.powi(2)
                + gamma * gamma / d.norm_before_i.powi(2) * norm(&d.delta_ij).powi(2);
            assert!((d.norm_after_i.powi(2) - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn norms_never_shrink_along_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for mode in [StepMode::OneSided, StepMode::Symmetric] {
            let mut a = random_unit(&mut rng, 6).scaled(2.0);
            let mut b = random_unit(&mut rng, 6).scaled(0.7);
            for _ in 0..200 {
                let (na, nb) = (norm(&a), norm(&b));
                let next_a = pull(&a, &b, 0.05).unwrap().0;
                if mode == StepMode::Symmetric {
                    b = pull(&b, &a, 0.05).unwrap().0;
                    assert!(norm(&b) >= nb * (1.0 - 4.0 * f64::EPSILON));
                }
                a = next_a;
                assert!(norm(&a) >= na * (1.0 - 4.0 * f64::EPSILON));
            }
        }
    }

    #[test]
    fn run_until_converged_examples() {
        let mut pairs = vec![(e(&[1.0, 2.0]), e(&[1.0, 2.0])); 3];
        let out = run_until_converged(&mut pairs, 0.1, 0.999, 100, StepMode::Symmetric).unwrap();
        assert_eq!(
            out,
            Convergence {
                steps: 0,
                converged: true
            }
        );

        let mut pairs = vec![(e(&[1.0, 0.0]), e(&[0.0, 1.0]))];
        let out = run_until_converged(&mut pairs, 0.5, 0.999, 10_000, StepMode::Symmetric).unwrap();
        let (steps, conv) = scalar_steps(1.0, FRAC_PI_2, 0.5, 0.999, 10_000);
        assert!(out.converged && conv);
        assert_eq!(out.steps, steps);

        let mut pairs = vec![(e(&[1.0, 0.0]), e(&[0.0, 1.0]))];
        let out = run_until_converged(&mut pairs, 0.5, 0.999, 0, StepMode::Symmetric).unwrap();
        assert_eq!(
            out,
            Convergence {
                steps: 0,
                converged: false
            }
        );

        let mut pairs = vec![(e(&[1.0, 0.0]), e(&[0.0, 1.0]))];
        let out = run_until_converged(&mut pairs, 0.5, 0.999, 10_000, StepMode::OneSided).unwrap();
        assert!(out.converged);
        // z_j never moves under the stop-gradient.
        assert_eq!(pairs[0].1, e(&[0.0, 1.0]));
    }

    #[test]
    fn vector_loop_tracks_scalar_oracle() {
        for &(rho, phi, gamma) in &[(1.0, 1.0, 0.1), (3.0, 2.5, 0.4), (0.5, 0.3, 0.02)] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut pairs = sample_pairs(&mut rng, 20, 4, rho, phi);
            let out = run_until_converged(&mut pairs, gamma, 0.999, 1_000_000, StepMode::Symmetric)
                .unwrap();
            let (steps, _) = scalar_steps(rho, phi, gamma, 0.999, 1_000_000);
            assert_eq!(out.steps, steps, "rho={rho} phi={phi}");
        }
    }

    #[test]
    fn sampled_pairs_have_exact_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (a, b) in sample_pairs(&mut rng, 20, 50, 3.0, 2.0) {
            let g = pair_geometry(&a, &b).unwrap();
            assert!((g.norm_i - 3.0).abs() < 1e-12 && (g.norm_j - 3.0).abs() < 1e-12);
            assert!((g.phi - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_check_collinear_and_acute() {
        let collinear = BoundCheckConfig {
            trials: 4,
            collinear: true,
            ..BoundCheckConfig::default()
        };
        assert_eq!(check_step_bound(&collinear).unwrap().violations, 0);
        let acute = BoundCheckConfig {
            trials: 2000,
            phi_max: PI / 2.0,
            ..BoundCheckConfig::default()
        };
        let r = check_step_bound(&acute).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.max_ratio < 1.0);
        assert!(check_step_bound(&BoundCheckConfig {
            trials: 0,
            ..BoundCheckConfig::default()
        })
        .is_err());
    }

    #[test]
    fn bound_check_full_range_finds_obtuse_violations() {
        let r = check_step_bound(&BoundCheckConfig::default()).unwrap();
        assert!(r.violations > 0);
        assert!(r.smallest_violating_phi.unwrap() > PI / 2.0);
        assert_eq!(r, check_step_bound(&BoundCheckConfig::default()).unwrap());
    }

    #[test]
    fn sweep_validation() {
        let cfg = SweepConfig {
            phi_grid: vec![PI],
            ..SweepConfig::default()
        };
        assert!(matches!(
            sweep_convergence(&cfg),
            Err(Error::InvalidConfig(_))
        ));
        let mut cfg = SweepConfig::default();
        cfg.rho_grid.clear();
        assert!(matches!(
            sweep_convergence(&cfg),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = SweepConfig {
            threshold: 1.0,
            ..SweepConfig::default()
        };
        assert!(matches!(
            sweep_convergence(&cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sweep_pre_converged_cell() {
        let cfg = SweepConfig {
            n_pairs: 1,
            rho_grid: vec![2.0],
            phi_grid: vec![0.01],
            ..SweepConfig::default()
        };
        let cells = sweep_convergence(&cfg).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].steps, 0);
        assert!(cells[0].converged);
    }

    #[test]
    fn sweep_is_deterministic_and_monotone_in_rho() {
        let cfg = SweepConfig {
            n_pairs: 50,
            gamma: 0.2,
            rho_grid: vec![0.5, 1.0, 2.0, 4.0],
            phi_grid: vec![1.0, 2.0],
            ..SweepConfig::default()
        };
        let a = sweep_convergence(&cfg).unwrap();
        let b = sweep_convergence(&cfg).unwrap();
        assert_eq!(a, b);
        for col in 0..2 {
            let row: Vec<u64> = (0..4).map(|r| a[r * 2 + col].steps).collect();
            assert!(row.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
        }
    }
}

//! Loss values and analytic gradients for the cosine similarity, InfoNCE,
//! normalized MSE and the strong cosine similarity, plus a central
//! finite-difference oracle.
//!
//! Sign convention: every gradient returned here is the gradient of the
//! *similarity* being maximized (the ascent direction). For the cosine
//! similarity that is `d cos / d z_i`; for InfoNCE it is `-d L / d z_i`. A
//! gradient-descent step on the loss is therefore `z_i + gamma * grad`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    check_dims, clamped_cos, guarded_norm, norm, pair_geometry, project_orthogonal, unit,
    Embedding, ZERO_NORM_GUARD,
};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Size of the shift applied to a degenerate strong-cosine midpoint.
pub const STRONG_COS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub grad: Embedding,
    /// Norm of `grad` as computed.
    pub analytic_norm: f64,
    /// Norm predicted by the closed-form magnitude of the loss.
    pub closed_form_norm: f64,
}

/// A batch of embeddings with one anchor and its positive; every other entry
/// is a negative for the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchView {
    embeddings: Vec<Embedding>,
    anchor_index: usize,
    positive_index: usize,
}

impl BatchView {
    pub fn new(
        embeddings: Vec<Embedding>,
        anchor_index: usize,
        positive_index: usize,
    ) -> Result<Self> {
        let b = embeddings.len();
        if b < 3 {
            return Err(Error::TooFewNegatives(b));
        }
        if anchor_index >= b || positive_index >= b {
            return Err(Error::InvalidBatch(format!(
                "indices ({anchor_index}, {positive_index}) out of range for batch of {b}"
            )));
        }
        if anchor_index == positive_index {
            return Err(Error::InvalidBatch(
                "anchor and positive must differ".to_string(),
            ));
        }
        for e in &embeddings[1..] {
            check_dims(&embeddings[0], e)?;
        }
        Ok(Self {
            embeddings,
            anchor_index,
            positive_index,
        })
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn anchor(&self) -> &Embedding {
        &self.embeddings[self.anchor_index]
    }

    pub fn positive(&self) -> &Embedding {
        &self.embeddings[self.positive_index]
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn positive_index(&self) -> usize {
        self.positive_index
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Embedding> {
        self.embeddings
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != self.anchor_index && *k != self.positive_index)
            .map(|(_, e)| e)
    }

    /// Same batch with the anchor replaced.
    pub fn with_anchor(&self, anchor: Embedding) -> Result<Self> {
        check_dims(self.anchor(), &anchor)?;
        let mut embeddings = self.embeddings.clone();
        embeddings[self.anchor_index] = anchor;
        Ok(Self {
            embeddings,
            anchor_index: self.anchor_index,
            positive_index: self.positive_index,
        })
    }
}

pub fn cos_sim(z_i: &Embedding, z_j: &Embedding) -> Result<f64> {
    clamped_cos(z_i, z_j)
}

/// `d cos(z_i, z_j) / d z_i = (z^_j)_{perp z_i} / |z_i|`, with magnitude
/// `sin(phi) / |z_i|`.
pub fn grad_cos_sim(z_i: &Embedding, z_j: &Embedding) -> Result<GradientReport> {
    let geo = pair_geometry(z_i, z_j)?;
    let grad = cos_direction(z_i, z_j)?.scaled(1.0 / geo.norm_i);
    Ok(GradientReport {
        analytic_norm: norm(&grad),
        closed_form_norm: geo.phi.sin() / geo.norm_i,
        grad,
    })
}

/// `(z^_j)_{perp z_i}`.
fn cos_direction(z_i: &Embedding, z_j: &Embedding) -> Result<Embedding> {
    project_orthogonal(&unit(z_j)?, z_i)
}

/// `log sum_{k != i, j} exp(cos(z_i, z_k))` together with the softmax
/// weights of the negatives.
fn repulsion(batch: &BatchView) -> Result<(f64, Vec<f64>)> {
    let anchor = batch.anchor();
    let cosines = batch
        .negatives()
        .map(|z_k| cos_sim(anchor, z_k))
        .collect::<Result<Vec<_>>>()?;
    let max = cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = cosines.iter().map(|c| (c - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights = exps.iter().map(|e| e / total).collect();
    Ok((max + total.ln(), weights))
}

/// InfoNCE at temperature 1 for the anchor of `batch`:
/// `-cos(z_i, z_j) + log S_i` with `S_i = sum_{k != i, j} exp(cos(z_i, z_k))`.
pub fn infonce_loss(batch: &BatchView) -> Result<f64> {
    let attraction = cos_sim(batch.anchor(), batch.positive())?;
    let (log_s, _) = repulsion(batch)?;
    Ok(-attraction + log_s)
}

/// Ascent direction `-dL/dz_i` of [`infonce_loss`]:
///
/// `(1/|z_i|) [ (z^_j)_{perp} - sum_k (w_k z^_k)_{perp} ]`, `w_k = sim(z_i, z_k) / S_i`.
///
/// The repulsion sum enters with a minus sign; it is what pushes the anchor
/// away from its negatives.
pub fn grad_infonce(batch: &BatchView) -> Result<GradientReport> {
    let anchor = batch.anchor();
    let anchor_norm = guarded_norm(anchor)?;
    let (_, weights) = repulsion(batch)?;

    // Sum of per-term cosine gradients.
    let mut grad = grad_cos_sim(anchor, batch.positive())?.grad;
    for (z_k, w) in batch.negatives().zip(&weights) {
        grad = grad.add_scaled(-w, &grad_cos_sim(anchor, z_k)?.grad)?;
    }

    // Single projection of the combined target direction.
    let mut target = unit(batch.positive())?;
    for (z_k, w) in batch.negatives().zip(&weights) {
        target = target.add_scaled(-w, &unit(z_k)?)?;
    }
    let closed = project_orthogonal(&target, anchor)?;

    Ok(GradientReport {
        analytic_norm: norm(&grad),
        closed_form_norm: norm(&closed) / anchor_norm,
        grad,
    })
}

/// Squared distance between the unit vectors, `2 - 2 cos` in exact arithmetic.
pub fn normalized_mse(z_i: &Embedding, z_j: &Embedding) -> Result<f64> {
    let d = unit(z_i)?.sub(&unit(z_j)?)?;
    d.dot(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongCosine {
    pub loss: f64,
    /// Ascent gradient w.r.t. `z_i` with the midpoint held constant.
    pub grad: Embedding,
}

/// Frozen midpoint `(z_i + z_j) / 2`. When it vanishes it is shifted by
/// [`STRONG_COS_EPS`] along a fixed unit direction orthogonal to `z_i`: the
/// coordinate axis least aligned with `z_i`, with its `z_i` component removed.
pub fn strong_cos_midpoint(z_i: &Embedding, z_j: &Embedding) -> Result<Embedding> {
    let mid = z_i.add_scaled(1.0, z_j)?.scaled(0.5);
    if norm(&mid) >= ZERO_NORM_GUARD {
        return Ok(mid);
    }
    let zi = unit(z_i)?;
    let axis = (0..zi.dim())
        .min_by(|&a, &b| zi[a].abs().total_cmp(&zi[b].abs()))
        .expect("dim >= 2");
    let mut e = vec![0.0; zi.dim()];
    e[axis] = 1.0;
    let dir = unit(&project_orthogonal(&Embedding::new(e)?, &zi)?)?;
    mid.add_scaled(STRONG_COS_EPS, &dir)
}

/// Strong cosine similarity `2 z^_i . z^_j'` with `z_j' = (z_i + z_j)/2`
/// treated as a constant. For unit `z_i` the gradient norm is `2 sin(phi/2)`.
pub fn strong_cos_sim(z_i: &Embedding, z_j: &Embedding) -> Result<StrongCosine> {
    let mid = strong_cos_midpoint(z_i, z_j)?;
    let loss = 2.0 * cos_sim(z_i, &mid)?;
    let grad = grad_cos_sim(z_i, &mid)?.grad.scaled(2.0);
    Ok(StrongCosine { loss, grad })
}

/// Central differences `(f(z + h e_k) - f(z - h e_k)) / 2h` per coordinate.
pub fn finite_difference_grad<F, E>(
    mut f: F,
    z: &Embedding,
    h: f64,
) -> std::result::Result<Embedding, E>
where
    F: FnMut(&Embedding) -> std::result::Result<f64, E>,
    E: From<Error>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {h}")).into());
    }
    let mut out = Vec::with_capacity(z.dim());
    let mut probe = z.as_slice().to_vec();
    for k in 0..z.dim() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = f(&Embedding::new(probe.clone())?)?;
        probe[k] = orig - h;
        let minus = f(&Embedding::new(probe.clone())?)?;
        probe[k] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(Embedding::new(out)?)
}

/// `|a - b| / max(|a|, |b|)`, or the absolute difference when both are
/// below `floor`.
pub fn relative_error(a: &Embedding, b: &Embedding, floor: f64) -> Result<f64> {
    let diff = norm(&a.sub(b)?);
    let scale = norm(a).max(norm(b));
    Ok(if scale < floor { diff } else { diff / scale })
}

/// Random configurations for comparing analytic gradients with central
/// differences. Each trial draws `d` uniformly from `dim_range`, Gaussian
/// embeddings scaled by a factor in `[0.5, 2)`, and a batch of 3 to 8
/// embeddings for InfoNCE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub dim_min: usize,
    pub dim_max: usize,
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            dim_min: 2,
            dim_max: 64,
            h: DEFAULT_FD_STEP,
            tolerance: 1e-6,
            seed: 42,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.dim_min < 2 || self.dim_min > self.dim_max {
            return bad(format!(
                "need 2 <= dim_min <= dim_max, got [{}, {}]",
                self.dim_min, self.dim_max
            ));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be > 0, got {}", self.h));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub tolerance: f64,
    pub worst_cos_sim: f64,
    pub worst_infonce: f64,
    pub worst_strong_cos: f64,
    pub passed: bool,
}

/// Below this norm [`relative_error`] falls back to the absolute error.
const REL_ERROR_FLOOR: f64 = 1e-8;

/// Worst relative error between each analytic gradient and its central
/// finite-difference estimate.
pub fn check_gradients(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use rand::Rng;
    cfg.validate()?;
    let mut rng = crate::rng::stream_rng(cfg.seed, 0, 0);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, d: usize| -> Result<Embedding> {
        let scale = rng.random_range(0.5..2.0);
        Ok(Embedding::new(crate::rng::gaussian_vec(rng, d))?.scaled(scale))
    };
    let (mut w_cos, mut w_nce, mut w_strong) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cfg.trials {
        let d = rng.random_range(cfg.dim_min..=cfg.dim_max);
        let zi = draw(&mut rng, d)?;
        let zj = draw(&mut rng, d)?;

        let fd = finite_difference_grad(|z| cos_sim(z, &zj), &zi, cfg.h)?;
        w_cos = w_cos.max(relative_error(
            &grad_cos_sim(&zi, &zj)?.grad,
            &fd,
            REL_ERROR_FLOOR,
        )?);

        let b = rng.random_range(3..=8);
        let mut batch = vec![zi.clone(), zj.clone()];
        for _ in 2..b {
            batch.push(draw(&mut rng, d)?);
        }
        let view = BatchView::new(batch, 0, 1)?;
        let fd = finite_difference_grad(
            |z| Ok::<_, Error>(-infonce_loss(&view.with_anchor(z.clone())?)?),
            &zi,
            cfg.h,
        )?;
        w_nce = w_nce.max(relative_error(
            &grad_infonce(&view)?.grad,
            &fd,
            REL_ERROR_FLOOR,
        )?);

        let mid = strong_cos_midpoint(&zi, &zj)?;
        let fd = finite_difference_grad(|z| Ok::<_, Error>(2.0 * cos_sim(z, &mid)?), &zi, cfg.h)?;
        w_strong = w_strong.max(relative_error(
            &strong_cos_sim(&zi, &zj)?.grad,
            &fd,
            REL_ERROR_FLOOR,
        )?);
    }
    Ok(GradCheckReport {
        trials: cfg.trials,
        tolerance: cfg.tolerance,
        worst_cos_sim: w_cos,
        worst_infonce: w_nce,
        worst_strong_cos: w_strong,
        passed: [w_cos, w_nce, w_strong].iter().all(|w| *w < cfg.tolerance),
    })
}

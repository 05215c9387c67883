//! Batch losses over embedding matrices, returning `dL/dZ` for backprop.
//!
//! These are loss gradients (descent convention), unlike the single-anchor
//! functions in [`crate::losses`] which return ascent directions.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::geometry::ZERO_NORM_GUARD;

fn row_norms(z: &Array2<f64>) -> Result<Array1<f64>> {
    let norms = raw_norms(z);
    if let Some(n) = norms.iter().find(|n| **n <= ZERO_NORM_GUARD) {
        return Err(Error::ZeroNorm { norm: *n });
    }
    Ok(norms)
}

/// `d cos(a, b) / d a = (b^ - cos a^) / |a|`
fn cos_grad(a: ArrayView1<f64>, na: f64, b: ArrayView1<f64>, nb: f64, cos: f64) -> Array1<f64> {
    (&b / nb - &a * (cos / na)) / na
}

fn raw_norms(z: &Array2<f64>) -> Array1<f64> {
    z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

/// Row-wise cosine similarities between `a` and `b`. A row with norm at or
/// below the zero-norm guard has cosine 0.
pub fn paired_cosines(a: &Array2<f64>, b: &Array2<f64>) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let na = raw_norms(a);
    let nb = raw_norms(b);
    Ok(a.rows()
        .into_iter()
        .zip(b.rows())
        .enumerate()
        .map(|(i, (x, y))| {
            if na[i] <= ZERO_NORM_GUARD || nb[i] <= ZERO_NORM_GUARD {
                0.0
            } else {
                (x.dot(&y) / (na[i] * nb[i])).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

/// Symmetrized negative cosine between predictions and stop-gradient
/// targets: `L = -(1/2b) sum_n [cos(p1_n, t2_n) + cos(p2_n, t1_n)]`.
/// Returns `(L, dL/dp1, dL/dp2)`. Zero rows (a relu layer can switch off
/// entirely) contribute cosine 0 and no gradient.
pub fn attraction_loss(
    p1: &Array2<f64>,
    p2: &Array2<f64>,
    t1: &Array2<f64>,
    t2: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let b = p1.nrows();
    let scale = 1.0 / (2.0 * b as f64);
    let one_side = |p: &Array2<f64>, t: &Array2<f64>| -> Result<(f64, Array2<f64>)> {
        let cos = paired_cosines(p, t)?;
        let np = raw_norms(p);
        let nt = raw_norms(t);
        let mut g = Array2::zeros(p.raw_dim());
        for n in 0..b {
            if np[n] <= ZERO_NORM_GUARD || nt[n] <= ZERO_NORM_GUARD {
                continue;
            }
            let row = cos_grad(p.row(n), np[n], t.row(n), nt[n], cos[n]);
            g.row_mut(n).assign(&(row * -scale));
        }
        Ok((-scale * cos.iter().sum::<f64>(), g))
    };
    let (l1, g1) = one_side(p1, t2)?;
    let (l2, g2) = one_side(p2, t1)?;
    Ok((l1 + l2, g1, g2))
}

/// InfoNCE at temperature 1 averaged over every anchor of `z = [z1; z2]`.
/// The positive of row `m` is the other view of the same sample; all other
/// rows are negatives. Returns `(L, dL/dz1, dL/dz2)`.
pub fn infonce_batch(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if z1.dim() != z2.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    let b = z1.nrows();
    if 2 * b < 3 {
        return Err(Error::TooFewNegatives(2 * b));
    }
    let n = 2 * b;
    let z = ndarray::concatenate(ndarray::Axis(0), &[z1.view(), z2.view()]).expect("same width");
    let norms = row_norms(&z)?;
    let unit = &z / &norms.view().insert_axis(ndarray::Axis(1));
    let cos = unit.dot(&unit.t()).mapv(|c| c.clamp(-1.0, 1.0));
    let positive = |m: usize| if m < b { m + b } else { m - b };

    // coef[i][j] = dL / d cos_ij for anchor i.
    let mut coef = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let j = positive(i);
        let negs: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
        let max = negs
            .iter()
            .map(|&k| cos[[i, k]])
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = negs.iter().map(|&k| (cos[[i, k]] - max).exp()).sum();
        loss += inv_n * (-cos[[i, j]] + max + total.ln());
        coef[[i, j]] -= inv_n;
        for &k in &negs {
            coef[[i, k]] += inv_n * (cos[[i, k]] - max).exp() / total;
        }
    }

    // cos_mj depends on z_m through both (m, j) and (j, m) entries.
    let sym = &coef + &coef.t();
    let mut grad = Array2::<f64>::zeros(z.raw_dim());
    for m in 0..n {
        let mut g = Array1::<f64>::zeros(z.ncols());
        for j in 0..n {
            let w = sym[[m, j]];
            if j != m && w != 0.0 {
                g += &(cos_grad(z.row(m), norms[m], z.row(j), norms[j], cos[[m, j]]) * w);
            }
        }
        grad.row_mut(m).assign(&g);
    }
    let g1 = grad.slice(ndarray::s![..b, ..]).to_owned();
    let g2 = grad.slice(ndarray::s![b.., ..]).to_owned();
    Ok((loss, g1, g2))
}

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::ZERO_NORM_GUARD;

/// Leave-one-out k-nearest-neighbor accuracy under cosine distance.
///
/// Neighbors are ordered by distance, then by index. The majority label among
/// the `k` nearest wins; vote ties go to the smallest label. Rows with norm
/// at or below the zero-norm guard have cosine 0 to everything.
pub fn knn_accuracy(embeddings: &Array2<f64>, labels: &[usize], k: usize) -> Result<f64> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} embeddings but {} labels",
            labels.len()
        )));
    }
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    if n < k + 1 {
        return Err(Error::TooFewPoints { n, k });
    }
    let unit: Vec<Option<Vec<f64>>> = embeddings
        .rows()
        .into_iter()
        .map(|r| {
            let norm = r.dot(&r).sqrt();
            (norm > ZERO_NORM_GUARD).then(|| r.iter().map(|v| v / norm).collect())
        })
        .collect();
    let cos = |a: usize, b: usize| match (&unit[a], &unit[b]) {
        (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>(),
        _ => 0.0,
    };
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);

    let mut correct = 0usize;
    let mut neighbors: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        neighbors.clear();
        neighbors.extend((0..n).filter(|&j| j != i).map(|j| (1.0 - cos(i, j), j)));
        neighbors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; n_labels];
        for &(_, j) in &neighbors[..k] {
            votes[labels[j]] += 1;
        }
        // max_by_key keeps the last maximum; scan in reverse so the smallest label wins.
        let (pred, _) = votes
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|(_, &v)| v)
            .expect("at least one label");
        if pred == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

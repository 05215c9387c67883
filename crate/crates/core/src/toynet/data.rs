//! Gaussian-cluster data standing in for an image dataset. Augmentation adds
//! fresh isotropic noise, so the two views of a sample differ only by noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, random_unit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub d_in: usize,
    /// Class centers lie on the sphere of this radius.
    pub cluster_radius: f64,
    /// Per-coordinate std of samples around their center.
    pub spread: f64,
    /// Per-coordinate std of the augmentation noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            per_class: 96,
            d_in: 16,
            cluster_radius: 3.0,
            spread: 1.0,
            noise_sigma: 1.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub points: Vec<(Vec<f64>, usize)>,
    pub n_classes: usize,
    pub noise_sigma: f64,
}

/// Samples are stored class by class, `per_class` each.
pub fn make_synthetic_dataset(cfg: &DatasetConfig) -> Result<SyntheticDataset> {
    if cfg.n_classes == 0 || cfg.d_in < 2 {
        return Err(Error::InvalidConfig("need >= 1 class and d_in >= 2".into()));
    }
    if cfg.per_class < 2 {
        return Err(Error::InvalidConfig(format!(
            "every class needs >= 2 samples, got {}",
            cfg.per_class
        )));
    }
    for (name, v) in [
        ("cluster_radius", cfg.cluster_radius),
        ("spread", cfg.spread),
        ("noise_sigma", cfg.noise_sigma),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{name} must be >= 0, got {v}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| {
            random_unit(&mut rng, cfg.d_in)
                .scaled(cfg.cluster_radius)
                .into_vec()
        })
        .collect();
    let mut points = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let x = center
                .iter()
                .zip(gaussian_vec(&mut rng, cfg.d_in))
                .map(|(c, n)| c + cfg.spread * n)
                .collect();
            points.push((x, label));
        }
    }
    Ok(SyntheticDataset {
        points,
        n_classes: cfg.n_classes,
        noise_sigma: cfg.noise_sigma,
    })
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.0.len())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn inputs(&self, indices: &[usize]) -> Array2<f64> {
        let d = self.dim();
        let flat: Vec<f64> = indices
            .iter()
            .flat_map(|&i| self.points[i].0.iter().copied())
            .collect();
        Array2::from_shape_vec((indices.len(), d), flat).expect("rows share a dimension")
    }

    /// One augmented view of each indexed sample.
    pub fn augment<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Array2<f64> {
        let mut x = self.inputs(indices);
        if self.noise_sigma > 0.0 {
            let noise = gaussian_vec(rng, x.len());
            x.iter_mut()
                .zip(noise)
                .for_each(|(v, n)| *v += self.noise_sigma * n);
        }
        x
    }

    /// Splits off the first `eval_per_class` samples of every class.
    pub fn split(&self, eval_per_class: usize) -> Result<(SyntheticDataset, SyntheticDataset)> {
        let mut seen = vec![0usize; self.n_classes];
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for p in &self.points {
            if seen[p.1] < eval_per_class {
                eval.push(p.clone());
            } else {
                train.push(p.clone());
            }
            seen[p.1] += 1;
        }
        if seen.iter().any(|&n| n < eval_per_class + 2) || eval_per_class < 2 {
            return Err(Error::InvalidConfig(format!(
                "split needs >= 2 evaluation and >= 2 training samples per class (eval_per_class = {eval_per_class})"
            )));
        }
        let part = |points| SyntheticDataset {
            points,
            n_classes: self.n_classes,
            noise_sigma: self.noise_sigma,
        };
        Ok((part(train), part(eval)))
    }
}

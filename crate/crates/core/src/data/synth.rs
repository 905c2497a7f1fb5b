//! Synthetic Gaussian-blob datasets, the desk-scale stand-in for image data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::tensor::Tensor;

/// Draw `n_per_class` samples per class from isotropic Gaussians at seeded
/// random centers in `[-1, 1]^feature_dim`.
///
/// Deterministic per seed. Samples are laid out class-major
/// (class 0 first), which downstream shuffles and partitions undo.
pub fn synth_blobs(
    n_classes: usize,
    n_per_class: usize,
    feature_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || n_per_class == 0 || feature_dim == 0 {
        return Err(Error::invalid("blob counts must all be >= 1"));
    }
    if spread.is_nan() || spread <= 0.0 {
        return Err(Error::invalid(format!("spread must be > 0, got {spread}")));
    }
    let mut rng = rng_from(seed);
    let mut centers = Vec::with_capacity(n_classes * feature_dim);
    for _ in 0..n_classes * feature_dim {
        centers.push(rng.random_range(-1.0..1.0));
    }
    let n = n_classes * n_per_class;
    let mut data = Vec::with_capacity(n * feature_dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..n_classes {
        let center = &centers[class * feature_dim..(class + 1) * feature_dim];
        for _ in 0..n_per_class {
            for &c in center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(c + spread * noise);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, feature_dim], data)?, labels, n_classes)
}

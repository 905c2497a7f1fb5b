//! Deterministic dataset preparation for experiment runs.

use rand::seq::SliceRandom;

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{load_idx, split_distillation, synth_blobs, LabeledDataset, UnlabeledDataset};
use crate::error::{Result, StageExt};
use crate::seed::{derive_seed, rng_from};

/// The three data pieces every protocol consumes.
#[derive(Debug, Clone)]
pub struct DataBundle {
    /// Labeled pool the clients partition.
    pub pool: LabeledDataset,
    /// Public unlabeled distillation set.
    pub x_dist: UnlabeledDataset,
    /// Held-out evaluation set.
    pub test: LabeledDataset,
}

impl DataBundle {
    pub fn n_classes(&self) -> usize {
        self.pool.n_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.pool.feature_dim()
    }
}

/// Build the training pool, X_dist and test set for a config.
///
/// Synthetic data takes a seeded holdout as the test set before the
/// distillation split; IDX data uses the official test files.
pub fn prepare_data(config: &ExperimentConfig) -> Result<DataBundle> {
    let d = &config.dataset;
    let seed = config.master_seed;
    match d.source {
        DataSource::Synth => {
            let full = synth_blobs(
                d.n_classes,
                d.n_per_class,
                d.feature_dim,
                d.spread,
                derive_seed(seed, "dataset", 0),
            )
            .stage("dataset")?;
            let n = full.len();
            let n_test = ((d.holdout_fraction * n as f64).round() as usize).max(1);
            let mut indices: Vec<usize> = (0..n).collect();
            indices.shuffle(&mut rng_from(derive_seed(seed, "holdout", 0)));
            let (test_idx, rest_idx) = indices.split_at(n_test);
            let test = full.subset(test_idx).stage("dataset")?;
            let rest = full.subset(rest_idx).stage("dataset")?;
            let (pool, x_dist) =
                split_distillation(&rest, d.dist_fraction, derive_seed(seed, "split", 0))
                    .stage("dataset")?;
            Ok(DataBundle { pool, x_dist, test })
        }
        DataSource::Idx => {
            let images = d.images.as_ref().expect("validated");
            let labels = d.labels.as_ref().expect("validated");
            let test_images = d.test_images.as_ref().expect("validated");
            let test_labels = d.test_labels.as_ref().expect("validated");
            let full = load_idx(images, labels).stage("dataset")?;
            let test = load_idx(test_images, test_labels).stage("dataset")?;
            let (pool, x_dist) =
                split_distillation(&full, d.dist_fraction, derive_seed(seed, "split", 0))
                    .stage("dataset")?;
            Ok(DataBundle { pool, x_dist, test })
        }
    }
}

//! Dataset ingestion, the train/distillation split and the IID/NIID
//! client partitioners.

mod container;
mod idx;
mod partition;
mod synth;

pub use container::{load_container, save_container};
pub use idx::load_idx;
pub use partition::{class_probability_vector, partition, ClassProbabilityVector};
pub use synth::synth_blobs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

/// Feature rows with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.n_rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows vs {} labels",
                features.n_rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.row_len()
    }

    /// New dataset holding the given rows (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let width = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            features: Tensor::from_parts(vec![indices.len(), width], data),
            labels,
            n_classes: self.n_classes,
        })
    }

    /// Rows whose label is contained in `classes`.
    pub fn filter_by_classes(&self, classes: &[usize]) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.subset(&keep)
    }

    /// Sorted list of distinct labels present.
    pub fn classes_present(&self) -> Vec<usize> {
        let mut present = vec![false; self.n_classes];
        for &l in &self.labels {
            present[l] = true;
        }
        (0..self.n_classes).filter(|&c| present[c]).collect()
    }
}

/// Feature rows without labels (the public distillation pool).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    features: Tensor,
}

impl UnlabeledDataset {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.n_rows() == 0 {
            return Err(Error::invalid("unlabeled dataset must hold >= 1 sample"));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.n_rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.row_len()
    }

    /// Copy of the given rows.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let width = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.features.row(i));
        }
        UnlabeledDataset::new(Tensor::from_parts(vec![indices.len(), width], data))
    }
}

/// Which per-client class-probability scheme to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    Niid1,
    Niid2,
    Niid3,
}

/// Client partitioning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub kind: PartitionKind,
    pub n_clients: usize,
    pub n_classes: usize,
    pub samples_per_client: usize,
}

impl PartitionScheme {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::invalid("scheme needs >= 1 client"));
        }
        if self.n_classes == 0 {
            return Err(Error::invalid("scheme needs >= 1 class"));
        }
        Ok(())
    }
}

/// Split `full` into a training pool and an unlabeled distillation set.
///
/// The index split is uniform, disjoint and exact: `|x_dist| =
/// round(dist_fraction * n)` and every row lands on exactly one side.
pub fn split_distillation(
    full: &LabeledDataset,
    dist_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    if !(dist_fraction > 0.0 && dist_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "dist_fraction must be in (0, 1), got {dist_fraction}"
        )));
    }
    let n = full.len();
    let n_dist = (dist_fraction * n as f64).round() as usize;
    if n_dist == 0 || n_dist == n {
        return Err(Error::invalid(format!(
            "dist_fraction {dist_fraction} leaves an empty side for {n} samples"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng_from(seed));
    let (dist_idx, train_idx) = indices.split_at(n_dist);
    let train = full.subset(train_idx)?;
    let dist = UnlabeledDataset::new(full.subset(dist_idx)?.features)?;
    Ok((train, dist))
}

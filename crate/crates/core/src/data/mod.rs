//! Datasets: MNIST IDX ingestion and desk-scale synthetic stand-ins.

mod idx;
mod synth;

pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synth::{synth_dataset, SynthKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Provenance, Tensor};

/// Labeled examples with features normalized to roughly `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
    image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
        image_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {n_classes} classes"
            )));
        }
        if let Some((r, c)) = image_shape {
            if r * c != features.trailing() {
                return Err(Error::Dimension(format!(
                    "image shape {r}x{c} does not match feature width {}",
                    features.trailing()
                )));
            }
        }
        Ok(Self {
            features: features.with_provenance(Provenance::Private),
            labels,
            n_classes,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.trailing()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.n_classes, self.image_shape)
    }
}

/// One-hot encoding; `None` gives the all-zero (unconditional) vector.
pub fn one_hot(label: Option<usize>, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    if let Some(l) = label {
        v[l] = 1.0;
    }
    v
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    IdxFiles {
        images: std::path::PathBuf,
        labels: std::path::PathBuf,
    },
    SyntheticGaussianMixture {
        n: usize,
        seed: u64,
    },
    SyntheticDigits8x8 {
        n: usize,
        seed: u64,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::IdxFiles { images, labels } => load_idx(images, labels),
            DatasetSource::SyntheticGaussianMixture { n, seed } => {
                synth_dataset(SynthKind::GaussianMixture, *n, *seed)
            }
            DatasetSource::SyntheticDigits8x8 { n, seed } => {
                synth_dataset(SynthKind::Digits8x8, *n, *seed)
            }
        }
    }
}

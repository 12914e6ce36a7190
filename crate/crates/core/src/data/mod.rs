//! Datasets, label noise, subsets, augmentation and the phase schedules
//! that feed them to training.

mod idx;
mod protocol;
mod synthetic;
mod transforms;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;

pub use idx::load_mnist_idx;
pub use protocol::{
    build_continual_protocol, build_fresh_protocol, build_warm_start_protocol, epochs_for_subset, BoundaryAction,
    BufferPolicy, PhaseData, PhaseSpec, ProtocolKind, ProtocolRealizer, ProtocolSpec, ReplayBufferView,
    CONTINUAL_MAX_NOISE,
};
pub use synthetic::{make_synthetic, SyntheticSpec};
pub use transforms::{
    augment_batch, flip_horizontal, inject_label_noise, inject_label_noise_with_indices, pad_crop, sample_subset,
    sample_subset_indices, AUGMENT_PAD,
};

/// `(height, width, channels)`, row-major with channels innermost.
pub type ImageShape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Tensor2,
    labels: Vec<usize>,
    num_classes: usize,
    image_shape: Option<ImageShape>,
}

impl Dataset {
    pub fn new(inputs: Tensor2, labels: Vec<usize>, num_classes: usize, image_shape: Option<ImageShape>) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::shape("dataset labels", inputs.rows(), labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if let Some((h, w, c)) = image_shape {
            if h * w * c != inputs.cols() {
                return Err(Error::shape("dataset image shape", inputs.cols(), h * w * c));
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &Tensor2 {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image_shape
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            image_shape: self.image_shape,
        }
    }

    /// The first `n` rows (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Same inputs with replaced labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.inputs.clone(), labels, self.num_classes, self.image_shape)
    }
}

//! Labeled data sources, the noise sampler, and epoch batching.

mod image_dir;
mod synthetic;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{Real, Tensor};

pub use image_dir::{area_resize, load_image_dataset};
pub use synthetic::{make_synthetic, SyntheticDescriptor, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("image directory {0} contains no files")]
    EmptyDirectory(String),
    #[error("label file row {row}: {detail}")]
    BadRow { row: usize, detail: String },
    #[error("label file row {row}: image {path} not found")]
    MissingImage { row: usize, path: String },
    #[error("label file row {row}: could not decode {path}: {detail}")]
    Decode {
        row: usize,
        path: String,
        detail: String,
    },
    #[error("label file has no data rows")]
    NoRows,
    #[error("batch size {batch} larger than dataset of {len} samples")]
    BatchTooLarge { batch: usize, len: usize },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Where a dataset came from; enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetDescriptor {
    Synthetic(SyntheticDescriptor),
    ImageDir {
        dir: String,
        label_file: String,
        scale: usize,
        channels: usize,
        label_names: Vec<String>,
    },
}

impl DatasetDescriptor {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn synthetic(&self) -> Option<&SyntheticDescriptor> {
        match self {
            DatasetDescriptor::Synthetic(s) => Some(s),
            DatasetDescriptor::ImageDir { .. } => None,
        }
    }
}

/// Samples normalized to `[-1, 1]` (batch-major) with aligned label rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Tensor<f64>,
    pub labels: Tensor<f64>,
    pub descriptor: DatasetDescriptor,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label_dim(&self) -> usize {
        self.labels.shape()[1]
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    /// Gathers a batch of samples and labels at precision `T`.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> (Tensor<T>, Tensor<T>) {
        (
            self.samples.select_rows(idx).cast(),
            self.labels.select_rows(idx).cast(),
        )
    }

    /// Rows with exactly the given binary label vector.
    pub fn indices_with_label(&self, label: &[f64]) -> Vec<usize> {
        let k = self.label_dim();
        (0..self.len())
            .filter(|&i| &self.labels.data()[i * k..(i + 1) * k] == label)
            .collect()
    }
}

/// I.i.d. uniform noise on the open interval `(-1, 1)`, shape `[batch, z_dim]`.
pub fn sample_noise<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    z_dim: usize,
) -> Tensor<T> {
    let data = (0..batch * z_dim)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v > -1.0 {
                break T::lit(v);
            }
        })
        .collect();
    Tensor::new(vec![batch, z_dim], data).expect("noise shape is consistent")
}

/// Index batches for one epoch: a permutation fixed by `(seed, epoch)`, cut
/// into full batches. A trailing partial batch is dropped.
pub fn epoch_batches(
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatch);
    }
    if batch_size > len {
        return Err(DataError::BatchTooLarge {
            batch: batch_size,
            len,
        });
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks_exact(batch_size).map(|c| c.to_vec()).collect())
}

/// Deterministic shuffled batch sequence over a dataset.
pub fn batches(
    data: &LabeledDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    epoch_batches(data.len(), batch_size, seed, epoch)
}

#[cfg(test)]
mod tests;

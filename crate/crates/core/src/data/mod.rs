//! Datasets: synthetic textures, CIFAR binaries, PPM directories,
//! augmentation, and mini-batch iteration.

pub mod augment;
pub mod batch;
pub mod cifar;
pub mod ppm;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::target_classes;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use augment::{augment_batch, AugmentationSpec};
pub use batch::{iterate_batches, Batch, BatchPlan};
pub use cifar::{encode_cifar, read_cifar_binary, write_cifar_binary, CifarVariant};
pub use ppm::{parse_ppm, read_ppm, read_ppm_directory, PpmImage};
pub use synthetic::{generate_synthetic, SyntheticSpec, TextureParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Full,
}

/// Images `(P, C, H, W)` in `[0, 1]` with one-hot labels `(P, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f64>,
    pub labels: Tensor<f64>,
    pub split: Split,
    /// Where the samples came from, e.g. `synthetic:<json>` or a file list.
    pub provenance: String,
    /// CIFAR-100 coarse labels, kept so the binary layout round-trips.
    pub coarse_labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(images: Tensor<f64>, labels: Tensor<f64>, split: Split, provenance: impl Into<String>) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            split,
            provenance: provenance.into(),
            coarse_labels: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds one-hot labels from class indices.
    pub fn one_hot(classes: &[usize], n: usize) -> Result<Tensor<f64>> {
        let mut labels = Tensor::zeros(&[classes.len(), n]);
        for (r, &c) in classes.iter().enumerate() {
            if c >= n {
                return Err(Error::LabelOutOfRange { label: c, classes: n });
            }
            labels.row_mut(r)[c] = 1.0;
        }
        Ok(labels)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.len();
        if p == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.images.shape().len() != 4 || self.labels.shape().len() != 2 || self.labels.shape()[0] != p {
            return Err(Error::ShapeMismatch {
                expected: vec![p, self.classes()],
                actual: self.labels.shape().to_vec(),
            });
        }
        target_classes(&self.labels)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.labels.shape().get(1).copied().unwrap_or(0)
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_indices(&self) -> Vec<usize> {
        target_classes(&self.labels).expect("validated labels")
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for c in self.class_indices() {
            counts[c] += 1;
        }
        counts
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn subset(&self, rows: &[usize], split: Split) -> Self {
        Self {
            images: self.images.select_rows(rows),
            labels: self.labels.select_rows(rows),
            split,
            provenance: self.provenance.clone(),
            coarse_labels: self
                .coarse_labels
                .as_ref()
                .map(|c| rows.iter().map(|&r| c[r]).collect()),
        }
    }

    /// Stratified split: in each class a seeded permutation sends
    /// `floor(train_fraction * count)` samples to train and the rest to test.
    /// Both parts keep the original sample order.
    pub fn train_test_split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::invalid("train_fraction", format!("{train_fraction} is outside [0, 1]")));
        }
        let classes = self.class_indices();
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut rng = Rng::with_stream(seed, 0x5911);
        for c in 0..self.classes() {
            let members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
            let order = rng.permutation(members.len());
            let cut = (train_fraction * members.len() as f64).floor() as usize;
            for (rank, &o) in order.iter().enumerate() {
                if rank < cut {
                    train.push(members[o]);
                } else {
                    test.push(members[o]);
                }
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok((self.subset(&train, Split::Train), self.subset(&test, Split::Test)))
    }
}

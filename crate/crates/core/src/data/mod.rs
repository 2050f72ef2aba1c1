//! Labeled image datasets, batching and the pixel-domain contract.
//!
//! Images are stored as `(N, C, H, W)` arrays of `f64` in `[0, 1]`. Attacks
//! measure ε in these pixel units, so any per-channel standardization belongs
//! to the model (see [`crate::nn::Layer::Standardize`]), never to the data.
//! Labels are 0-based class indices.

mod cifar;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{s, Array, Array4, Axis, Dimension};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub use cifar::{load_cifar10, load_cifar100, write_cifar10_batch};
pub use synthetic::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Cifar10,
    Cifar100,
    Synthetic,
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetName::Cifar100),
            "synthetic" => Ok(DatasetName::Synthetic),
            other => Err(Error::UnknownDataset(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
            DatasetName::Synthetic => "synthetic",
        })
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Cifar10 { root: PathBuf },
    Cifar100 { root: PathBuf },
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn name(&self) -> DatasetName {
        match self {
            DatasetSource::Cifar10 { .. } => DatasetName::Cifar10,
            DatasetSource::Cifar100 { .. } => DatasetName::Cifar100,
            DatasetSource::Synthetic(_) => DatasetName::Synthetic,
        }
    }
}

/// Loads one split of a dataset.
pub fn load_dataset(source: &DatasetSource, split: Split) -> Result<LabeledImages> {
    match source {
        DatasetSource::Cifar10 { root } => load_cifar10(root, split),
        DatasetSource::Cifar100 { root } => load_cifar100(root, split),
        DatasetSource::Synthetic(spec) => Ok(spec.generate(split)),
    }
}

/// Images in `[0, 1]` with 0-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    images: Array4<f64>,
    labels: Vec<usize>,
    class_count: usize,
    class_names: Vec<String>,
}

impl LabeledImages {
    pub fn new(
        images: Array4<f64>,
        labels: Vec<usize>,
        class_count: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if images.len_of(Axis(0)) != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} images but {} labels",
                images.len_of(Axis(0)),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::InvalidData("class_count must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidData(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        let class_names = if class_names.len() == class_count {
            class_names
        } else {
            (0..class_count).map(|c| format!("class_{c}")).collect()
        };
        Ok(Self {
            images,
            labels,
            class_count,
            class_names,
        })
    }

    pub fn images(&self) -> &Array4<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.dim();
        (c, h, w)
    }

    /// Copies out the images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Array4<f64>, Vec<usize>) {
        let images = self.images.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (images, labels)
    }

    pub fn select(&self, indices: &[usize]) -> LabeledImages {
        let (images, labels) = self.gather(indices);
        LabeledImages {
            images,
            labels,
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }

    /// A seeded random subset of `limit` samples (kept in dataset order), or
    /// the whole set when `limit` is zero or not smaller than the set.
    pub fn subsample(&self, limit: usize, seed: u64) -> LabeledImages {
        if limit == 0 || limit >= self.len() {
            return self.clone();
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut seed::rng(seed, "subsample", 0, 0));
        indices.truncate(limit);
        indices.sort_unstable();
        self.select(&indices)
    }

    /// Splits off a held-out fraction (seeded) and returns `(rest, held_out)`.
    pub fn holdout(&self, fraction: f64, seed: u64) -> (LabeledImages, LabeledImages) {
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut seed::rng(seed, "holdout", 0, 0));
        let held = ((self.len() as f64) * fraction).round() as usize;
        let held = held.clamp(1, self.len().saturating_sub(1).max(1));
        let (a, b) = indices.split_at(held);
        let mut rest = b.to_vec();
        let mut out = a.to_vec();
        rest.sort_unstable();
        out.sort_unstable();
        (self.select(&rest), self.select(&out))
    }
}

/// Batch-size and ordering policy for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
}

impl BatchPlan {
    /// `batch_size` must be at least 1. A batch of one still trains: the
    /// contrastive loss pairs each natural sample with its adversarial twin.
    pub fn new(batch_size: usize, shuffle: bool, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        Ok(Self {
            batch_size,
            shuffle,
            seed,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Index lists for each batch; the final short batch is kept.
    pub fn order(&self, n: usize) -> Vec<Vec<usize>> {
        let mut indices: Vec<usize> = (0..n).collect();
        if self.shuffle {
            indices.shuffle(&mut seed::rng(self.seed, "batches", 0, 0));
        }
        indices
            .chunks(self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

pub fn make_batches(data: &LabeledImages, plan: &BatchPlan) -> Vec<Batch> {
    plan.order(data.len())
        .into_iter()
        .map(|indices| {
            let (images, labels) = data.gather(&indices);
            Batch {
                images,
                labels,
                indices,
            }
        })
        .collect()
}

/// Elementwise `min(max(x, 0), 1)`.
pub fn clamp_to_domain<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v.clamp(0.0, 1.0))
}

pub fn clamp_to_domain_in_place<D: Dimension>(x: &mut Array<f64, D>) {
    x.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

/// Random crop after 4-pixel zero padding, then a horizontal flip with
/// probability 1/2 (the usual CIFAR recipe). Output stays in `[0, 1]`.
pub fn augment(images: &Array4<f64>, rng: &mut Rng) -> Array4<f64> {
    const PAD: usize = 4;
    let (n, c, h, w) = images.dim();
    let mut padded = Array4::<f64>::zeros((n, c, h + 2 * PAD, w + 2 * PAD));
    padded
        .slice_mut(s![.., .., PAD..PAD + h, PAD..PAD + w])
        .assign(images);
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    for i in 0..n {
        let dy = rng.random_range(0..=2 * PAD);
        let dx = rng.random_range(0..=2 * PAD);
        let flip = rng.random_bool(0.5);
        let crop = padded.slice(s![i, .., dy..dy + h, dx..dx + w]);
        let mut dst = out.slice_mut(s![i, .., .., ..]);
        if flip {
            dst.assign(&crop.slice(s![.., .., ..;-1]));
        } else {
            dst.assign(&crop);
        }
    }
    out
}

//! Datasets, corruptions and top-1 evaluation.

mod cifar;
mod corrupt;
mod eval;
mod mnist;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cifar::{load_cifar10, parse_cifar_records};
pub use corrupt::{corrupt, corrupt_at, CorruptionGroup, CorruptionKind, CorruptionSpec};
pub use eval::{argmax, evaluate, predict, robustness_table, RobustnessRow};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
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

/// Per-channel standardization statistics, always taken from the training
/// split so train and test see the same transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn compute(images: &Tensor<f32>) -> Self {
        let (n, c) = (images.dim(0), images.dim(1));
        let plane = images.dim(2) * images.dim(3);
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for ch in 0..c {
            let (mut s, mut s2) = (0f64, 0f64);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for &v in &images.data()[off..off + plane] {
                    s += v as f64;
                    s2 += (v as f64) * (v as f64);
                }
            }
            let count = (n * plane) as f64;
            let m = s / count;
            mean.push(m as f32);
            std.push(((s2 / count - m * m).max(1e-12)).sqrt() as f32);
        }
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// `(x - mean) / std` per channel, for `[N,C,H,W]` images.
    pub fn apply(&self, images: &Tensor<f32>) -> Tensor<f32> {
        let c = images.dim(1);
        let plane = images.dim(2) * images.dim(3);
        let mut out = images.clone();
        for (k, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
            let ch = k % c;
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in chunk {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Images are stored in `[0, 1]`; standardization is applied on the way
/// into a model so corruptions can act on raw intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub classes: usize,
    pub split: Split,
    pub stats: ChannelStats,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, classes: usize, split: Split, stats: ChannelStats) -> Result<Self> {
        if images.rank() != 4 || images.dim(0) != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for images {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes,
            });
        }
        if stats.mean.len() != images.dim(1) || stats.std.len() != images.dim(1) {
            return Err(Error::Shape("channel statistics do not match image channels".into()));
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.images.dim(1), self.images.dim(2), self.images.dim(3)]
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images.rows(0, n),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            split: self.split,
            stats: self.stats.clone(),
        }
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let per = self.images.len() / self.len().max(1);
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(self.images.outer(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Dataset {
            images: Tensor::from_vec(&shape, data).expect("selection keeps shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
            stats: self.stats.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            _ => Err(Error::Config(format!("unknown dataset {s:?} (mnist|cifar10)"))),
        }
    }
}

impl DatasetKind {
    /// Conventional subdirectory of the data root.
    pub fn subdir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        }
    }

    pub fn load(self, dir: &std::path::Path, split: Split) -> Result<Dataset> {
        match self {
            DatasetKind::Mnist => load_mnist(dir, split),
            DatasetKind::Cifar10 => load_cifar10(dir, split),
        }
    }
}

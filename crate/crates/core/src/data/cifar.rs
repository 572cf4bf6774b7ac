//! CIFAR-10 binary batches: records of 1 label byte followed by 3072 pixel
//! bytes (1024 red, 1024 green, 1024 blue, each row-major 32x32).

use std::fs;
use std::path::Path;

use crate::data::{ChannelStats, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RECORD: usize = 1 + 3 * 32 * 32;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];

/// Returns pixels scaled to `[0, 1]` and labels.
pub fn parse_cifar_records(bytes: &[u8], path: &str) -> Result<(Vec<f32>, Vec<u8>)> {
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::DatasetLength {
            path: path.to_string(),
            expected: (bytes.len() / RECORD + 1) as u64 * RECORD as u64,
            actual: bytes.len() as u64,
        });
    }
    let n = bytes.len() / RECORD;
    let mut pixels = Vec::with_capacity(n * (RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(RECORD) {
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

fn load_files(dir: &Path, files: &[&str]) -> Result<Tensor<f32>> {
    Ok(load_with_labels(dir, files)?.0)
}

fn load_with_labels(dir: &Path, files: &[&str]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = dir.join(name);
        let bytes = fs::read(&path)?;
        let (p, l) = parse_cifar_records(&bytes, &path.display().to_string())?;
        pixels.extend(p);
        labels.extend(l);
    }
    let n = labels.len();
    Ok((Tensor::from_vec(&[n, 3, 32, 32], pixels)?, labels))
}

pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let (images, labels) = match split {
        Split::Train => load_with_labels(dir, &TRAIN_FILES)?,
        Split::Test => load_with_labels(dir, &["test_batch.bin"])?,
    };
    let stats = match split {
        Split::Train => ChannelStats::compute(&images),
        Split::Test => ChannelStats::compute(&load_files(dir, &TRAIN_FILES)?),
    };
    Dataset::new(images, labels, 10, split, stats)
}

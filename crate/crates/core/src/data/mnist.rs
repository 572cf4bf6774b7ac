//! MNIST IDX files (uncompressed): big-endian magic `0x00000803` for
//! images with dims `N, rows, cols`, and `0x00000801` for labels with `N`.

use std::fs;
use std::path::Path;

use crate::data::{ChannelStats, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::DatasetLength {
            path: path.to_string(),
            expected: (at + 4) as u64,
            actual: bytes.len() as u64,
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &str) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::DatasetMagic {
            path: path.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &str) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::DatasetLength {
            path: path.to_string(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Images as `[N, 1, rows, cols]` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &str) -> Result<Tensor<f32>> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    check_len(bytes, 16 + n * rows * cols, path)?;
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(&[n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &str) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    check_len(bytes, 8 + n, path)?;
    Ok(bytes[8..].to_vec())
}

fn read(dir: &Path, name: &str) -> Result<(Vec<u8>, String)> {
    let path = dir.join(name);
    let shown = path.display().to_string();
    let bytes = fs::read(&path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{shown}: {e}"))))?;
    Ok((bytes, shown))
}

fn load_images(dir: &Path, prefix: &str) -> Result<Tensor<f32>> {
    let (bytes, path) = read(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    parse_idx_images(&bytes, &path)
}

/// Loads `train-*` or `t10k-*` IDX files from `dir`. Standardization
/// statistics always come from the training images.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = load_images(dir, prefix)?;
    let (bytes, path) = read(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let labels = parse_idx_labels(&bytes, &path)?;
    if labels.len() != images.dim(0) {
        return Err(Error::Shape(format!(
            "{} labels for {} images",
            labels.len(),
            images.dim(0)
        )));
    }
    let stats = match split {
        Split::Train => ChannelStats::compute(&images),
        Split::Test => ChannelStats::compute(&load_images(dir, "train")?),
    };
    Dataset::new(images, labels, 10, split, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32) -> Vec<u8> {
        let mut v = IMAGE_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend((0..n * rows * cols).map(|i| (i % 256) as u8));
        v
    }

    #[test]
    fn parses_images() {
        let t = parse_idx_images(&idx_images(2, 3, 4), "x").unwrap();
        assert_eq!(t.shape(), &[2, 1, 3, 4]);
        assert_eq!(t.data()[1], 1.0 / 255.0);
    }

    #[test]
    fn truncated_names_lengths() {
        let mut b = idx_images(2, 3, 4);
        b.pop();
        match parse_idx_images(&b, "x") {
            Err(Error::DatasetLength { expected, actual, .. }) => {
                assert_eq!((expected, actual), (40, 39));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_magic() {
        let b = idx_images(1, 1, 1);
        assert!(matches!(parse_idx_labels(&b, "x"), Err(Error::DatasetMagic { .. })));
    }
}

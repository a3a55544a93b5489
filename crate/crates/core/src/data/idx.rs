use std::path::Path;

use super::{DataError, Dataset, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or_else(|| DataError::Truncated {
        what: what.to_string(),
        needed: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("four bytes")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(DataError::BadMagic {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let needed = header + len;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            what: what.to_string(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..needed])
}

/// `(count, rows, cols, pixels)` from an IDX image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let what = "image file";
    check_magic(bytes, IDX_IMAGES_MAGIC, what)?;
    let n = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    Ok((n, rows, cols, body(bytes, 16, n * rows * cols, what)?))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let what = "label file";
    check_magic(bytes, IDX_LABELS_MAGIC, what)?;
    let n = be_u32(bytes, 4, what)? as usize;
    body(bytes, 8, n, what)
}

/// Pixels become `byte / 255`, one flattened image per row. The class count
/// is one past the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&images)?;
    let labels = parse_idx_labels(&labels)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 || rows * cols == 0 {
        return Err(DataError::Invalid("IDX file holds no pixels".into()));
    }
    let features = Tensor::new(vec![n, rows * cols], pixels.iter().map(|&b| f64::from(b) / 255.0).collect())
        .expect("header dimensions");
    let labels: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, num_classes)
}

/// Write `dataset` as IDX image and label files, quantizing features in
/// `[0, 1]` to bytes. `rows * cols` must equal the feature dimension.
pub fn write_idx(dataset: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    if rows * cols != dataset.feature_dim() {
        return Err(DataError::Invalid(format!(
            "{rows}x{cols} images do not match feature dimension {}",
            dataset.feature_dim()
        )));
    }
    if dataset.num_classes > 256 {
        return Err(DataError::Invalid("IDX labels hold at most 256 classes".into()));
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| DataError::Invalid(format!("{v} does not fit in u32")));
    let mut img = Vec::with_capacity(16 + dataset.features.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [dataset.len(), rows, cols] {
        img.extend_from_slice(&to_u32(v)?.to_be_bytes());
    }
    img.extend(dataset.features.data().iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&to_u32(dataset.len())?.to_be_bytes());
    lab.extend(dataset.labels.iter().map(|&l| l as u8));
    for (path, bytes) in [(images_path, img), (labels_path, lab)] {
        std::fs::write(path, bytes).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

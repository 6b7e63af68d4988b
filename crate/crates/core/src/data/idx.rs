use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label pair (MNIST layout), scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = std::fs::read(images_path)?;
    let lab = std::fs::read(labels_path)?;
    let (images, labels) = parse_idx(&img, images_path, &lab, labels_path)?;
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    let split = images_path
        .file_name()
        .and_then(|f| f.to_str())
        .map_or("unknown", |f| if f.starts_with("t10k") { "test" } else { "train" });
    Dataset::new(images, labels, num_classes, "mnist", split)
}

pub fn parse_idx(img: &[u8], img_path: &Path, lab: &[u8], lab_path: &Path) -> Result<(Array2<f64>, Vec<usize>)> {
    let header = |bytes: &[u8], path: &Path, words: usize, magic: u32| -> Result<Vec<u32>> {
        if bytes.len() < 4 * words {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: 4 * words,
                found: bytes.len(),
            });
        }
        let vals: Vec<u32> = bytes[..4 * words]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if vals[0] != magic {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: magic,
                found: vals[0],
            });
        }
        Ok(vals)
    };
    let ih = header(img, img_path, 4, IMAGES_MAGIC)?;
    let lh = header(lab, lab_path, 2, LABELS_MAGIC)?;
    let (n, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);
    let n_labels = lh[1] as usize;
    let d = rows * cols;
    let expected = 16 + n * d;
    if img.len() < expected {
        return Err(Error::Truncated {
            path: img_path.to_path_buf(),
            expected,
            found: img.len(),
        });
    }
    if lab.len() < 8 + n_labels {
        return Err(Error::Truncated {
            path: lab_path.to_path_buf(),
            expected: 8 + n_labels,
            found: lab.len(),
        });
    }
    if n != n_labels {
        return Err(Error::CountMismatch { images: n, labels: n_labels });
    }
    let images = Array2::from_shape_vec((n, d), img[16..expected].iter().map(|&p| f64::from(p) / 255.0).collect())
        .expect("length checked");
    let labels = lab[8..8 + n].iter().map(|&l| usize::from(l)).collect();
    Ok((images, labels))
}

/// Serialises images (values in `[0, 1]`, rounded to bytes) and labels as
/// an IDX pair. Used for fixtures and exporting subsets.
pub fn encode_idx(images: &Array2<f64>, rows: usize, cols: usize, labels: &[usize]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len());
    for v in [IMAGES_MAGIC, images.nrows() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(images.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(labels.iter().map(|&l| l as u8));
    (img, lab)
}

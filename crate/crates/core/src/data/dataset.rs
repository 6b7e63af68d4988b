use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Inputs `(n, d)` with integer labels in `[0, num_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
    pub split: String,
}

impl Dataset {
    pub fn new(images: Array2<f64>, labels: Vec<usize>, num_classes: usize, name: &str, split: &str) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.nrows(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside [0, {num_classes})")));
        }
        if !images.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} {split} inputs")));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.to_string(),
            split: split.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            images: self.images.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
            split: self.split.clone(),
        }
    }

    /// Splits off the last `n` rows.
    pub fn split_tail(&self, n: usize) -> Result<(Self, Self)> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!("cannot hold out {n} of {} examples", self.len())));
        }
        let cut = self.len() - n;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        Ok((self.select(&head), self.select(&tail)))
    }
}

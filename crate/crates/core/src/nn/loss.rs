use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean over the batch of the summed squared residuals of the model output.
    SquaredError,
    /// Softmax over the model output followed by cross-entropy against
    /// (optionally smoothed) one-hot targets.
    SoftmaxCrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub label_smoothing: f64,
}

impl LossSpec {
    pub const fn squared_error() -> Self {
        Self {
            kind: LossKind::SquaredError,
            label_smoothing: 0.0,
        }
    }

    pub const fn cross_entropy(label_smoothing: f64) -> Self {
        Self {
            kind: LossKind::SoftmaxCrossEntropy,
            label_smoothing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::InvalidArgument(format!(
                "label_smoothing {} outside [0, 0.5)",
                self.label_smoothing
            )));
        }
        if self.kind == LossKind::SquaredError && self.label_smoothing != 0.0 {
            return Err(Error::InvalidArgument(
                "label smoothing only applies to softmax cross-entropy".into(),
            ));
        }
        Ok(())
    }

    /// Scalar loss of `outputs` against `targets`, both `(n, k)`.
    pub fn value(&self, outputs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
        self.validate()?;
        check_shapes(outputs, targets)?;
        let n = outputs.nrows() as f64;
        let value = match self.kind {
            LossKind::SquaredError => {
                outputs
                    .iter()
                    .zip(targets.iter())
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
                    / n
            }
            LossKind::SoftmaxCrossEntropy => {
                let log_p = log_softmax(outputs);
                let smoothed = self.smooth(targets);
                -(&log_p * &smoothed).sum() / n
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        Ok(value)
    }

    /// Loss value together with its gradient with respect to `outputs`.
    pub fn value_and_grad(&self, outputs: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let value = self.value(outputs, targets)?;
        let n = outputs.nrows() as f64;
        let grad = match self.kind {
            LossKind::SquaredError => (outputs - targets) * (2.0 / n),
            LossKind::SoftmaxCrossEntropy => (softmax(outputs) - self.smooth(targets)) / n,
        };
        Ok((value, grad))
    }

    fn smooth(&self, targets: &Array2<f64>) -> Array2<f64> {
        if self.label_smoothing == 0.0 {
            return targets.clone();
        }
        let k = targets.ncols() as f64;
        targets.mapv(|t| (1.0 - self.label_smoothing) * t + self.label_smoothing / k)
    }
}

fn check_shapes(outputs: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if outputs.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!(
            "outputs {:?} vs targets {:?}",
            outputs.dim(),
            targets.dim()
        )));
    }
    if outputs.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Encodes class labels as regression/classification targets for a model
/// with `output_dim` outputs: a single output gets the label value itself
/// (binary problems), wider outputs get one-hot rows.
pub fn encode_labels(labels: &[usize], output_dim: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), output_dim));
    for (i, &y) in labels.iter().enumerate() {
        if output_dim == 1 {
            t[[i, 0]] = y as f64;
        } else {
            t[[i, y]] = 1.0;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn squared_error_perfect_fit_is_zero() {
        let o = array![[0.2], [0.9]];
        assert_eq!(LossSpec::squared_error().value(&o, &o).unwrap(), 0.0);
    }

    #[test]
    fn squared_error_unit_residual_is_one_per_example() {
        let o = array![[1.0], [1.0], [1.0]];
        let t = array![[0.0], [0.0], [0.0]];
        assert_eq!(LossSpec::squared_error().value(&o, &t).unwrap(), 1.0);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 10] {
            let o = Array2::from_elem((4, k), 0.37);
            let t = encode_labels(&[0, 1, 1, 0], k);
            let v = LossSpec::cross_entropy(0.0).value(&o, &t).unwrap();
            assert!((v - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_rows_sum_to_one() {
        let t = encode_labels(&[3, 0, 9], 10);
        let s = LossSpec::cross_entropy(0.1).smooth(&t);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let o = array![[1000.0, -3.0, 2.0], [-1e3, 1e-9, 0.0]];
        for row in softmax(&o).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_specs_and_shapes() {
        let o = array![[0.0, 1.0]];
        let bad = LossSpec {
            kind: LossKind::SquaredError,
            label_smoothing: 0.1,
        };
        assert!(matches!(bad.value(&o, &o), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            LossSpec::squared_error().value(&o, &array![[0.0]]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(LossSpec::cross_entropy(0.5).validate().is_err());
    }
}

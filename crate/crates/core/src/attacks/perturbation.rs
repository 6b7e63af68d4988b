use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::Model;

/// Per-example perturbations `δ(x)` with their norms and an attack-success
/// flag (prediction at `x + δ` differs from the label).
///
/// Norms are computed on construction and carried through [`cut`] and
/// [`PerturbationBatch::scaled`], so the fields are read-only.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationBatch {
    deltas: Array2<f64>,
    norms_l2: Vec<f64>,
    norms_linf: Vec<f64>,
    success: Vec<bool>,
}

impl PerturbationBatch {
    pub fn new(deltas: Array2<f64>, success: Vec<bool>) -> Result<Self> {
        if success.len() != deltas.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} success flags for {} perturbations",
                success.len(),
                deltas.nrows()
            )));
        }
        if !deltas.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("perturbations".into()));
        }
        let norms_l2 = deltas.rows().into_iter().map(|r| l2(r.iter())).collect();
        let norms_linf = deltas
            .rows()
            .into_iter()
            .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        Ok(Self {
            deltas,
            norms_l2,
            norms_linf,
            success,
        })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            deltas: Array2::zeros((n, dim)),
            norms_l2: vec![0.0; n],
            norms_linf: vec![0.0; n],
            success: vec![false; n],
        }
    }

    pub fn deltas(&self) -> &Array2<f64> {
        &self.deltas
    }

    pub fn norms_l2(&self) -> &[f64] {
        &self.norms_l2
    }

    pub fn norms_linf(&self) -> &[f64] {
        &self.norms_linf
    }

    pub fn success(&self) -> &[bool] {
        &self.success
    }

    pub fn len(&self) -> usize {
        self.deltas.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_deltas(self) -> Array2<f64> {
        self.deltas
    }

    pub fn mean_l2(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(self.norms_l2.iter().sum::<f64>() / self.len() as f64)
    }

    /// `x + δ`.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.dim() != self.deltas.dim() {
            return Err(Error::ShapeMismatch(format!(
                "inputs {:?} vs perturbations {:?}",
                x.dim(),
                self.deltas.dim()
            )));
        }
        Ok(x + &self.deltas)
    }

    /// Uniform rescaling `ρ·δ`.
    pub fn scaled(&self, rho: f64) -> Self {
        Self {
            deltas: &self.deltas * rho,
            norms_l2: self.norms_l2.iter().map(|n| n * rho.abs()).collect(),
            norms_linf: self.norms_linf.iter().map(|n| n * rho.abs()).collect(),
            success: self.success.clone(),
        }
    }

    /// Recomputes the success flags against `model` on clean inputs `x`.
    pub fn refresh_success(&mut self, model: &Model, x: &Array2<f64>, labels: &[usize]) -> Result<()> {
        let pred = model.predict(&self.apply(x)?)?;
        self.success = pred.iter().zip(labels).map(|(p, y)| p != y).collect();
        Ok(())
    }

    /// Keeps only the rows in `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            deltas: self.deltas.select(Axis(0), idx),
            norms_l2: idx.iter().map(|&i| self.norms_l2[i]).collect(),
            norms_linf: idx.iter().map(|&i| self.norms_linf[i]).collect(),
            success: idx.iter().map(|&i| self.success[i]).collect(),
        }
    }
}

/// Projects every perturbation with ℓ2 norm above `eps` onto the sphere of
/// radius `eps`, leaving the others bit-identical. Directions are preserved
/// and success flags are carried over unchanged.
pub fn cut(batch: &PerturbationBatch, eps: f64) -> Result<PerturbationBatch> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("cutoff budget {eps} must be finite and >= 0")));
    }
    let mut out = batch.clone();
    for (i, mut row) in out.deltas.rows_mut().into_iter().enumerate() {
        let norm = batch.norms_l2[i];
        if norm > eps {
            let factor = eps / norm;
            row.mapv_inplace(|v| v * factor);
            // The recorded norm is the exact target; recomputing could land a
            // rounding error above eps and break idempotence.
            out.norms_l2[i] = eps;
            out.norms_linf[i] = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
    }
    Ok(out)
}

pub(crate) fn l2<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

/// `sign` with `sign(0) = 0`.
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

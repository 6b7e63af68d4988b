//! Adversarial-example generators and the ℓ2 cutoff operator.
//!
//! Every generator returns a [`PerturbationBatch`]: one `δ` per input row,
//! its ℓ2 and ℓ∞ norms, and whether `x + δ` is misclassified.

mod cw;
mod deepfool;
mod fgsm;
mod noise;
mod perturbation;
mod pgd;
mod spec;

use ndarray::{Array2, Axis};
use rand::Rng;

pub use cw::{cw_l2, CwConfig};
pub use deepfool::deepfool;
pub use fgsm::fgsm;
pub use noise::noise;
pub use perturbation::{cut, PerturbationBatch};
pub use pgd::{pgd, pgd_observed, PgdSchedule};
pub use spec::{AttackKind, AttackSpec, Norm, ValueRange};

use crate::error::Result;
use crate::nn::{LossSpec, Model};

/// Runs the attack described by `spec`. `loss` is the objective whose input
/// gradient the sign-based attacks follow; `rng` seeds the random ones.
pub fn generate<R: Rng + ?Sized>(
    model: &Model,
    x: &Array2<f64>,
    labels: &[usize],
    spec: &AttackSpec,
    loss: &LossSpec,
    rng: &mut R,
) -> Result<PerturbationBatch> {
    spec.validate()?;
    if x.nrows() != labels.len() {
        return Err(crate::Error::ShapeMismatch(format!("{} inputs vs {} labels", x.nrows(), labels.len())));
    }
    let eps = spec.budget_or_zero();
    match spec.kind {
        AttackKind::Fgsm => fgsm(model, x, labels, loss, eps, spec.range),
        AttackKind::Noise => {
            let batch = noise(x, eps, spec.range, rng)?;
            constrained_success(model, x, labels, batch.into_deltas())
        }
        AttackKind::Pgd => pgd(
            model,
            x,
            labels,
            loss,
            PgdSchedule {
                eps,
                steps: spec.steps,
                step_fraction: spec.pgd_step_fraction,
                init_fraction: spec.pgd_init_fraction,
            },
            spec.range,
            rng,
        ),
        AttackKind::DeepFool => deepfool(model, x, labels, spec.steps, spec.df_overshoot),
        AttackKind::CwL2 => cw_l2(
            model,
            x,
            labels,
            &CwConfig {
                steps: spec.steps,
                learning_rate: spec.cw_learning_rate,
                confidence: spec.cw_confidence,
                binary_search_steps: spec.cw_binary_search_steps,
                initial_const: spec.cw_initial_const,
                abort_early: spec.cw_abort_early,
                range: spec.range.unwrap_or(ValueRange::UNIT),
            },
        ),
    }
}

/// Class scores with one column per class; a single-output model scoring
/// `z` is read as the two-class scores `(−z, z)`.
pub(crate) fn class_scores(scores: &Array2<f64>) -> Array2<f64> {
    if scores.ncols() == 1 {
        let z = scores.column(0);
        ndarray::concatenate![Axis(1), (-&z).insert_axis(Axis(1)), z.insert_axis(Axis(1))]
    } else {
        scores.clone()
    }
}

/// Success for a budgeted attack: a nonzero perturbation that flips the
/// prediction away from the label.
pub(crate) fn constrained_success(model: &Model, x: &Array2<f64>, labels: &[usize], delta: Array2<f64>) -> Result<PerturbationBatch> {
    let pred = model.predict(&(x + &delta))?;
    let success = delta
        .rows()
        .into_iter()
        .zip(pred.iter().zip(labels))
        .map(|(row, (p, y))| p != y && row.iter().any(|&v| v != 0.0))
        .collect();
    PerturbationBatch::new(delta, success)
}

use ndarray::{Array2, Zip};

use super::perturbation::{sign, PerturbationBatch};
use super::spec::ValueRange;
use super::constrained_success;
use crate::error::Result;
use crate::nn::{encode_labels, LossSpec, Model};

/// Fast gradient sign method: `δ = ε·sign(∇ₓ loss)`, followed by clipping
/// `x + δ` into `range` when one is given.
pub fn fgsm(
    model: &Model,
    x: &Array2<f64>,
    labels: &[usize],
    loss: &LossSpec,
    eps: f64,
    range: Option<ValueRange>,
) -> Result<PerturbationBatch> {
    let targets = encode_labels(labels, model.output_dim());
    let grad = model.grad_input(x, &targets, loss)?;
    let mut delta = grad.mapv(|g| eps * sign(g));
    if let Some(r) = range {
        Zip::from(&mut delta).and(x).for_each(|d, &xi| *d = r.clamp(xi + *d) - xi);
    }
    constrained_success(model, x, labels, delta)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::nn::{Activation, Dense};

    fn linear() -> Model {
        Model::new(vec![Dense::new(array![[2.0, -1.0, 0.0]], array![0.0], Activation::Sigmoid).unwrap()]).unwrap()
    }

    #[test]
    fn steps_along_gradient_sign() {
        let x = array![[0.5, 0.5, 0.5]];
        let out = fgsm(&linear(), &x, &[1], &LossSpec::squared_error(), 0.1, None).unwrap();
        // Pushing a class-1 point down: decrease x0, increase x1, leave x2.
        assert_eq!(out.deltas(), &array![[-0.1, 0.1, 0.0]]);
        assert!((out.norms_linf()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn clipping_keeps_inputs_in_range() {
        let x = array![[0.05, 0.98, 0.5]];
        let out = fgsm(&linear(), &x, &[1], &LossSpec::squared_error(), 0.1, Some(ValueRange::UNIT)).unwrap();
        let adv = out.apply(&x).unwrap();
        assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((adv[[0, 0]] - 0.0).abs() < 1e-15);
        assert!((adv[[0, 1]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_linear_gradient_sign() {
        // Identity output z = x0 − 2·x1, squared error against 1 at z = 0.5:
        // ∂L/∂x = 2(z − 1)·w = (−1, 2), so δ = ε·(−1, 1).
        let m = Model::new(vec![Dense::new(array![[1.0, -2.0]], array![0.0], Activation::Identity).unwrap()]).unwrap();
        let x = array![[0.5, 0.0]];
        let out = fgsm(&m, &x, &[1], &LossSpec::squared_error(), 0.25, None).unwrap();
        assert_eq!(out.deltas(), &array![[-0.25, 0.25]]);
    }

    #[test]
    fn zero_budget_is_unsuccessful() {
        let x = array![[0.5, 0.5, 0.5]];
        let out = fgsm(&linear(), &x, &[0], &LossSpec::squared_error(), 0.0, None).unwrap();
        // The point is misclassified already, but δ = 0 is not an attack.
        assert_eq!(out.success(), &[false]);
    }
}

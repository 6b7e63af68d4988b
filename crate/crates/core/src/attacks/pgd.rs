use ndarray::{Array2, Zip};
use rand::Rng;

use super::perturbation::{sign, PerturbationBatch};
use super::spec::ValueRange;
use super::constrained_success;
use crate::error::Result;
use crate::nn::{encode_labels, LossSpec, Model};

/// Step schedule of projected gradient descent in the ℓ∞ ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdSchedule {
    pub eps: f64,
    pub steps: usize,
    /// Step size as a fraction of `eps`.
    pub step_fraction: f64,
    /// Half-width of the uniform random start as a fraction of `eps`.
    pub init_fraction: f64,
}

/// Projected gradient descent with a random start. `observer` sees the
/// perturbation after every step (step index from 1).
pub fn pgd_observed<R: Rng + ?Sized>(
    model: &Model,
    x: &Array2<f64>,
    labels: &[usize],
    loss: &LossSpec,
    schedule: PgdSchedule,
    range: Option<ValueRange>,
    rng: &mut R,
    observer: &mut dyn FnMut(usize, &Array2<f64>),
) -> Result<PerturbationBatch> {
    let PgdSchedule { eps, steps, step_fraction, init_fraction } = schedule;
    let targets = encode_labels(labels, model.output_dim());
    let half = eps * init_fraction;
    let mut delta = Array2::from_shape_fn(x.dim(), |_| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 });
    let project = |delta: &mut Array2<f64>| {
        Zip::from(delta).and(x).for_each(|d, &xi| {
            let v = d.clamp(-eps, eps);
            *d = match range {
                Some(r) => r.clamp(xi + v) - xi,
                None => v,
            };
        });
    };
    project(&mut delta);
    let step = eps * step_fraction;
    for s in 1..=steps {
        let grad = model.grad_input(&(x + &delta), &targets, loss)?;
        Zip::from(&mut delta).and(&grad).for_each(|d, &g| *d += step * sign(g));
        project(&mut delta);
        observer(s, &delta);
    }
    constrained_success(model, x, labels, delta)
}

pub fn pgd<R: Rng + ?Sized>(
    model: &Model,
    x: &Array2<f64>,
    labels: &[usize],
    loss: &LossSpec,
    schedule: PgdSchedule,
    range: Option<ValueRange>,
    rng: &mut R,
) -> Result<PerturbationBatch> {
    pgd_observed(model, x, labels, loss, schedule, range, rng, &mut |_, _| {})
}

//! Central-difference verification of the analytic gradients.

use ndarray::Array2;

use super::loss::LossSpec;
use super::model::Model;
use crate::error::{Error, Result};

/// Largest relative error `|analytic − fd| / (|analytic| + 1e-12)` over all
/// parameters and all input entries, where `fd` is the central difference
/// with step `h`.
pub fn finite_diff_check(model: &Model, x: &Array2<f64>, targets: &Array2<f64>, loss: &LossSpec, h: f64) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} outside [1e-8, 1e-3]")));
    }
    let (_, grads) = model.grad_params(x, targets, loss)?;
    let dx = model.grad_input(x, targets, loss)?;
    let eval = |m: &Model, x: &Array2<f64>| -> Result<f64> { loss.value(&m.forward(x)?, targets) };

    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (i, analytic) in grads.iter().enumerate() {
        let original = model.params().nth(i).expect("gradient count matches parameters");
        *probe.params_mut().nth(i).expect("index in range") = original + h;
        let up = eval(&probe, x)?;
        *probe.params_mut().nth(i).expect("index in range") = original - h;
        let down = eval(&probe, x)?;
        *probe.params_mut().nth(i).expect("index in range") = original;
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * h)));
    }

    let mut xp = x.clone();
    for (idx, &analytic) in dx.indexed_iter() {
        let original = x[idx];
        xp[idx] = original + h;
        let up = eval(model, &xp)?;
        xp[idx] = original - h;
        let down = eval(model, &xp)?;
        xp[idx] = original;
        // The batch loss is a mean, so ∂L/∂x is already per-batch scaled.
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-12)
}

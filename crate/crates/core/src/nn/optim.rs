use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step so the state can be built before the model it drives.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Option<Gradients>,
    second: Option<Gradients>,
    step: u64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first: None,
            second: None,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> Option<&Gradients> {
        self.first.as_ref()
    }

    pub fn second_moment(&self) -> Option<&Gradients> {
        self.second.as_ref()
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        check_grads(model, grads)?;
        let m = self.first.get_or_insert_with(|| Gradients::zeros_like(model));
        let v = self.second.get_or_insert_with(|| Gradients::zeros_like(model));
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);

        let moments = m
            .layers
            .iter_mut()
            .flat_map(|g| g.weight.iter_mut().chain(g.bias.iter_mut()))
            .zip(
                v.layers
                    .iter_mut()
                    .flat_map(|g| g.weight.iter_mut().chain(g.bias.iter_mut())),
            );
        for ((p, g), (mi, vi)) in model.params_mut().zip(grads.iter()).zip(moments) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Applies one Adam update to `model` in place.
pub fn adam_step(model: &mut Model, grads: &Gradients, state: &mut Adam) -> Result<()> {
    state.step(model, grads)
}

/// Plain gradient descent, `θ ← θ − α ∇θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Sgd {
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        check_grads(model, grads)?;
        for (p, g) in model.params_mut().zip(grads.iter()) {
            *p -= self.learning_rate * g;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(learning_rate)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { learning_rate }),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(model, grads),
            Optimizer::Sgd(s) => s.step(model, grads),
        }
    }
}

fn check_grads(model: &Model, grads: &Gradients) -> Result<()> {
    if grads.layers.len() != model.layers().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient layers for {} model layers",
            grads.layers.len(),
            model.layers().len()
        )));
    }
    for (i, (g, l)) in grads.layers.iter().zip(model.layers()).enumerate() {
        if g.weight.dim() != l.weight.dim() || g.bias.len() != l.bias.len() {
            return Err(Error::ShapeMismatch(format!("gradient shape of layer {i}")));
        }
        if !g.weight.iter().chain(g.bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {i}")));
        }
    }
    Ok(())
}

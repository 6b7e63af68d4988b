use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

/// Elementwise activation applied after a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    pub fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Sigmoid => z.mapv(sigmoid),
        }
    }

    /// Multiplies `upstream` in place by the derivative evaluated at
    /// pre-activation `z` with output `a`.
    pub(crate) fn backprop_in_place(self, upstream: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(upstream).and(z).for_each(|u, &zv| {
                if zv <= 0.0 {
                    *u = 0.0;
                }
            }),
            Activation::Sigmoid => Zip::from(upstream).and(a).for_each(|u, &av| {
                *u *= av * (1.0 - av);
            }),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

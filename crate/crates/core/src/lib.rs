//! Blind adversarial training: dense networks, adversarial attacks, the
//! cutoff-scaled training loop, robustness evaluation, the two-concentric
//! circles lab and the closed-form analysis of a single sigmoid neuron.

pub mod attacks;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod tcc;
pub mod theory;
pub mod training;

pub use error::{Error, Result};

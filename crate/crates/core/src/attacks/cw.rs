use ndarray::{Array2, Axis, Zip};

use super::class_scores;
use super::perturbation::PerturbationBatch;
use super::spec::ValueRange;
use crate::error::Result;
use crate::nn::Model;

/// Settings of the Carlini-Wagner ℓ2 attack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CwConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub confidence: f64,
    pub binary_search_steps: usize,
    pub initial_const: f64,
    pub abort_early: bool,
    pub range: ValueRange,
}

const UPPER_INIT: f64 = 1e10;
const TANH_LIMIT: f64 = 0.999_999;

/// Carlini-Wagner ℓ2 on the final pre-activations.
///
/// Minimises `‖δ‖² + c·max(Z_y − max_{k≠y} Z_k + κ, 0)` in the tanh
/// variables `x = lo + (hi − lo)(tanh w + 1)/2` with Adam, binary-searching
/// the constant `c` per example. Returns the smallest successful `δ` found;
/// rows that never succeed keep the last iterate of the final search step.
pub fn cw_l2(model: &Model, x: &Array2<f64>, labels: &[usize], cfg: &CwConfig) -> Result<PerturbationBatch> {
    let (n, d) = x.dim();
    let ValueRange { lo, hi } = cfg.range;
    let half = (hi - lo) / 2.0;
    let w0 = x.mapv(|v| (((v - lo) / half - 1.0).clamp(-TANH_LIMIT, TANH_LIMIT)).atanh());
    let to_x = |w: &Array2<f64>| w.mapv(|v| lo + half * (v.tanh() + 1.0));

    let mut lower = vec![0.0; n];
    let mut upper = vec![UPPER_INIT; n];
    let mut consts = vec![cfg.initial_const; n];
    let mut best_l2 = vec![f64::INFINITY; n];
    let mut best = Array2::<f64>::zeros((n, d));
    let mut last = Array2::<f64>::zeros((n, d));
    let check_every = (cfg.steps / 10).max(1);

    for _ in 0..cfg.binary_search_steps {
        let mut w = w0.clone();
        let mut m1 = Array2::<f64>::zeros((n, d));
        let mut m2 = Array2::<f64>::zeros((n, d));
        let mut live = vec![true; n];
        let mut prev = vec![f64::INFINITY; n];
        let mut succeeded = vec![false; n];
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);

        for it in 0..cfg.steps {
            if !live.iter().any(|&l| l) {
                break;
            }
            let xa = to_x(&w);
            let delta = &xa - x;
            let cache = model.forward_cached(&xa)?;
            let scores = class_scores(cache.scores());
            let mut seed = Array2::<f64>::zeros((n, scores.ncols()));
            for i in 0..n {
                if !live[i] {
                    continue;
                }
                let y = labels[i];
                let (mut other, mut other_k) = (f64::NEG_INFINITY, y);
                for (k, &s) in scores.row(i).iter().enumerate() {
                    if k != y && s > other {
                        other = s;
                        other_k = k;
                    }
                }
                let margin = scores[[i, y]] - other;
                let l2sq: f64 = delta.row(i).iter().map(|v| v * v).sum();
                let objective = l2sq + consts[i] * (margin + cfg.confidence).max(0.0);
                if !objective.is_finite() {
                    live[i] = false;
                    continue;
                }
                if margin + cfg.confidence < 0.0 {
                    succeeded[i] = true;
                    if l2sq.sqrt() < best_l2[i] {
                        best_l2[i] = l2sq.sqrt();
                        best.row_mut(i).assign(&delta.row(i));
                    }
                }
                if cfg.abort_early && it > 0 && it % check_every == 0 {
                    if objective > prev[i] * 0.9999 {
                        live[i] = false;
                        continue;
                    }
                    prev[i] = objective;
                } else if it == 0 {
                    prev[i] = objective;
                }
                if margin + cfg.confidence > 0.0 {
                    seed[[i, y]] = consts[i];
                    seed[[i, other_k]] = -consts[i];
                }
            }
            // Binary models expose one score z as classes (−z, z).
            let seed = if model.output_dim() == 1 {
                (&seed.column(1) - &seed.column(0)).insert_axis(Axis(1)).to_owned()
            } else {
                seed
            };
            let mut grad = model.score_vjp(&cache, &seed) + &(&delta * 2.0);
            Zip::from(&mut grad).and(&w).for_each(|g, &wv| {
                let t = wv.tanh();
                *g *= half * (1.0 - t * t);
            });
            let t = (it + 1) as i32;
            let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
            for i in (0..n).filter(|&i| live[i]) {
                let mut wr = w.row_mut(i);
                let mut r1 = m1.row_mut(i);
                let mut r2 = m2.row_mut(i);
                for j in 0..d {
                    let g = grad[[i, j]];
                    r1[j] = b1 * r1[j] + (1.0 - b1) * g;
                    r2[j] = b2 * r2[j] + (1.0 - b2) * g * g;
                    wr[j] -= cfg.learning_rate * (r1[j] / c1) / ((r2[j] / c2).sqrt() + eps);
                }
            }
        }
        last = to_x(&w) - x;
        if !last.iter().all(|v| v.is_finite()) {
            last.mapv_inplace(|v| if v.is_finite() { v } else { 0.0 });
        }

        for i in 0..n {
            if succeeded[i] {
                upper[i] = upper[i].min(consts[i]);
                consts[i] = (lower[i] + upper[i]) / 2.0;
            } else {
                lower[i] = lower[i].max(consts[i]);
                consts[i] = if upper[i] < UPPER_INIT { (lower[i] + upper[i]) / 2.0 } else { consts[i] * 10.0 };
            }
        }
    }

    for i in 0..n {
        if best_l2[i].is_infinite() {
            best.row_mut(i).assign(&last.row(i));
        }
    }
    let pred = model.predict(&(x + &best))?;
    let success = pred.iter().zip(labels).map(|(p, y)| p != y).collect();
    PerturbationBatch::new(best, success)
}

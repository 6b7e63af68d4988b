use ndarray::{Array1, Array2, Axis};

use super::class_scores;
use super::perturbation::PerturbationBatch;
use crate::error::Result;
use crate::nn::{predict_from_scores, Model};

/// Batched multi-class DeepFool.
///
/// Each step linearises the class scores around the current iterate and
/// moves to the nearest linearised boundary of the true class. Rows leave
/// the loop once `x + (1 + overshoot)·r` is misclassified. Points that are
/// misclassified from the start get `δ = 0` and count as successful.
///
/// Input gradients of the score differences are `v · W₁` where `v` lives in
/// the first hidden layer, so their norms come from `v G vᵀ` with the Gram
/// matrix `G = W₁ W₁ᵀ` instead of materialising one input-sized gradient per
/// class.
pub fn deepfool(model: &Model, x: &Array2<f64>, labels: &[usize], steps: usize, overshoot: f64) -> Result<PerturbationBatch> {
    let n = x.nrows();
    let classes = model.num_classes();
    let w1 = &model.layers()[0].weight;
    let gram = model.first_layer_gram();
    let mut r_tot = Array2::<f64>::zeros(x.dim());
    let scale = 1.0 + overshoot;

    let initial = model.predict(x)?;
    let mut active: Vec<usize> = (0..n).filter(|&i| initial[i] == labels[i]).collect();

    for _ in 0..steps {
        if active.is_empty() {
            break;
        }
        let xa = x.select(Axis(0), &active) + &(r_tot.select(Axis(0), &active) * scale);
        let cache = model.forward_cached(&xa)?;
        let scores = class_scores(cache.scores());
        let pred = predict_from_scores(&scores);
        // Only rows still on the true side take a step.
        let rows: Vec<usize> = (0..active.len()).filter(|&p| pred[p] == labels[active[p]]).collect();
        if rows.is_empty() {
            break;
        }

        let m = active.len();
        let out_dim = model.output_dim();
        let hidden: Vec<Array2<f64>> = (0..classes)
            .map(|c| {
                let mut seed = Array2::<f64>::zeros((m, out_dim));
                if out_dim == 1 {
                    seed.column_mut(0).fill(if c == 1 { 1.0 } else { -1.0 });
                } else {
                    seed.column_mut(c).fill(1.0);
                }
                model.score_vjp_first_layer(&cache, &seed)
            })
            .collect();
        let projected: Vec<Array2<f64>> = hidden.iter().map(|h| h.dot(&gram)).collect();

        let mut step_hidden = Array2::<f64>::zeros((rows.len(), gram.nrows()));
        let mut moving = Vec::with_capacity(rows.len());
        for (k, &p) in rows.iter().enumerate() {
            let y = labels[active[p]];
            let hy = hidden[y].row(p);
            let py = projected[y].row(p);
            let yy = py.dot(&hy);
            let mut best: Option<(f64, usize, f64, f64)> = None;
            for c in (0..classes).filter(|&c| c != y) {
                let hc = hidden[c].row(p);
                let nrm2 = projected[c].row(p).dot(&hc) - 2.0 * py.dot(&hc) + yy;
                if !(nrm2 > 0.0) {
                    continue;
                }
                let f = scores[[p, c]] - scores[[p, y]];
                let dist = f.abs() / nrm2.sqrt();
                if best.map_or(true, |(d, ..)| dist < d) {
                    best = Some((dist, c, f, nrm2));
                }
            }
            let Some((_, c, f, nrm2)) = best else { continue };
            let v: Array1<f64> = &hidden[c].row(p) - &hy;
            step_hidden.row_mut(k).assign(&(v * (f.abs() / nrm2)));
            moving.push((k, active[p]));
        }
        if moving.is_empty() {
            break;
        }
        let step = step_hidden.dot(w1);
        for &(k, i) in &moving {
            let mut row = r_tot.row_mut(i);
            row += &step.row(k);
        }
        active = moving.into_iter().map(|(_, i)| i).collect();
    }

    let delta = r_tot * scale;
    let pred = model.predict(&(x + &delta))?;
    let success = pred.iter().zip(labels).map(|(p, y)| p != y).collect();
    PerturbationBatch::new(delta, success)
}

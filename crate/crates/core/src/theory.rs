//! Closed-form analysis of a single sigmoid neuron separating the two
//! points `x¹ = (−1, 0)` (label 0) and `x² = (1, 0)` (label 1).
//!
//! The neuron is `σ(W₁x₁ + W₂x₂ + b)` trained with squared error plus an
//! `ℓ1` penalty `λ(|W| + |b|)`. The functions here evaluate the stationarity
//! conditions and loss derivatives in closed form, solve for the converged
//! weight `W₁` by bisection, and run the actual training loop on the
//! two-point problem to compare how fast each strategy reaches `b = 0`.
//!
//! Adversarial examples of the restricted analysis sit at `(1 − η)x̂`, so
//! `η = 1` puts both of them on the ideal boundary `x₁ = 0`. In the
//! unrestricted analysis the two points move by `η₁` and `η₂`.

use std::io::Write;
use std::ops::ControlFlow;

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::AttackSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, Dense, LossSpec, Model, OptimizerKind};
use crate::training::{train_observed, Strategy, TrainConfig};

/// Right end of the initial bracket used by every solver.
pub const BRACKET_HI: f64 = 50.0;
/// Largest right end the restricted-AT solver expands to.
pub const BRACKET_MAX: f64 = 1e7;

fn dsigmoid(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// `σ′(x)(1 − σ(x))(3σ(x) − 1)`, the curvature contribution of one point.
fn curvature_term(x: f64) -> f64 {
    let s = sigmoid(x);
    dsigmoid(x) * sigmoid(-x) * (3.0 * s - 1.0)
}

/// `λ(1 + e^{W₁})²(1 + e^{−W₁}) − 4`, zero at the natural-training optimum.
pub fn nt_residual(lambda: f64, w1: f64) -> f64 {
    lambda * (1.0 + w1.exp()).powi(2) * (1.0 + (-w1).exp()) - 4.0
}

/// `∂L/∂W₁` of restricted AT at `b = 0`:
/// `−2(1−σ(W₁))²σ(W₁) − 2(1−η)(1−σ((1−η)W₁))²σ((1−η)W₁) + λ sign(W₁)`.
pub fn at_residual(lambda: f64, eta: f64, w1: f64) -> f64 {
    let u = (1.0 - eta) * w1;
    -2.0 * sigmoid(-w1).powi(2) * sigmoid(w1) - 2.0 * (1.0 - eta) * sigmoid(-u).powi(2) * sigmoid(u)
        + lambda * signum(w1)
}

fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Bisection on `[lo, hi]` where `f(lo) < 0 < f(hi)`, run until the
/// interval stops shrinking. Returns whichever end has the smaller residual.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if f(lo).abs() <= f(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Converged `W₁` of natural training, the root of [`nt_residual`] in
/// `[0, 50]`. Roots exist only for `0 < λ ≤ 1/2`, where the residual at
/// `W₁ = 0` (which is `8λ − 4`) is not positive.
pub fn solve_nt_w1(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 4.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside (0, 4)")));
    }
    let f = |w| nt_residual(lambda, w);
    if f(0.0) > 0.0 || f(BRACKET_HI) < 0.0 {
        return Err(Error::NoBracket { lo: 0.0, hi: BRACKET_HI });
    }
    Ok(bisect(f, 0.0, BRACKET_HI))
}

/// Converged `W₁` of restricted AT with budget `η`, the root of
/// [`at_residual`]. The bracket starts at `[0, 50]` and its right end
/// doubles up to [`BRACKET_MAX`], since for `η` close to 1 the root grows
/// into the thousands.
pub fn solve_at_w1(lambda: f64, eta: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be positive")));
    }
    if !(0.0..=2.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta {eta} outside [0, 2]")));
    }
    let f = |w| at_residual(lambda, eta, w);
    let lo = f64::MIN_POSITIVE;
    if f(lo) > 0.0 {
        return Err(Error::NoBracket { lo: 0.0, hi: BRACKET_HI });
    }
    let mut hi = BRACKET_HI;
    while f(hi) < 0.0 {
        if hi >= BRACKET_MAX {
            return Err(Error::NoBracket { lo: 0.0, hi });
        }
        hi *= 2.0;
    }
    Ok(bisect(f, lo, hi))
}

/// The `η ∈ [0, 1]` maximising the restricted-AT `W₁`, by successive grid
/// refinement (1001 points, then three zooms onto the best cell). Returns
/// `(η, W₁)`.
pub fn argmax_at_w1(lambda: f64) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best = (0.0, solve_at_w1(lambda, 0.0)?);
    for _ in 0..4 {
        let step = (hi - lo) / 1000.0;
        for i in 0..=1000 {
            let eta = (lo + step * i as f64).min(1.0);
            let w = solve_at_w1(lambda, eta)?;
            if w > best.1 {
                best = (eta, w);
            }
        }
        lo = (best.0 - step).max(0.0);
        hi = (best.0 + step).min(1.0);
    }
    Ok(best)
}

/// `∂²L_AT/∂b²` for restricted AT with budget `η`: the four
/// [`curvature_term`]s at `W₁ ∓ b` and `(1 − η)W₁ ∓ b`.
pub fn curvature_b(w1: f64, b: f64, eta: f64) -> f64 {
    let u = (1.0 - eta) * w1;
    curvature_term(w1 - b) + curvature_term(w1 + b) + curvature_term(u - b) + curvature_term(u + b)
}

/// `∂²L_NT/∂b²`, the two clean-point terms of [`curvature_b`].
pub fn nt_curvature_b(w1: f64, b: f64) -> f64 {
    curvature_term(w1 - b) + curvature_term(w1 + b)
}

/// `∂L/∂b` of unrestricted AT when `x¹` moves by `η₁` and `x²` by `η₂`
/// along the first axis.
pub fn unrestricted_grad_b(w1: f64, b: f64, eta1: f64, eta2: f64, lambda: f64) -> f64 {
    let term0 = |z: f64| sigmoid(z) * dsigmoid(z);
    let term1 = |z: f64| (sigmoid(z) - 1.0) * dsigmoid(z);
    term0(-w1 + b) + term0(w1 * (eta1 - 1.0) + b) + term1(w1 + b) + term1(w1 * (1.0 - eta2) + b) + lambda * signum(b)
}

/// One row per grid point of a two-column sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub header: [&'static str; 2],
    pub rows: Vec<(f64, f64)>,
}

impl Sweep {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},{}", self.header[0], self.header[1])?;
        for (x, y) in &self.rows {
            writeln!(out, "{x},{y}")?;
        }
        Ok(())
    }

    /// Row with the largest second column.
    pub fn argmax(&self) -> Option<(f64, f64)> {
        self.rows.iter().copied().fold(None, |best, r| match best {
            Some(b) if b.1 >= r.1 => Some(b),
            _ => Some(r),
        })
    }
}

fn sweep(header: [&'static str; 2], grid: &[f64], f: impl Fn(f64) -> Result<f64>) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let rows = grid.iter().map(|&x| Ok((x, f(x)?))).collect::<Result<_>>()?;
    Ok(Sweep { header, rows })
}

/// Natural-training `W₁` over a grid of `λ`.
pub fn sweep_nt_w1(lambdas: &[f64]) -> Result<Sweep> {
    sweep(["lambda", "w1"], lambdas, solve_nt_w1)
}

/// Restricted-AT `W₁` over a grid of `η`.
pub fn sweep_at_w1(lambda: f64, etas: &[f64]) -> Result<Sweep> {
    sweep(["eta", "w1"], etas, |eta| solve_at_w1(lambda, eta))
}

/// `∂²L_AT/∂b²` at the converged `W₁(η)` and `b = 0`, over a grid of `η`.
pub fn sweep_curvature(lambda: f64, etas: &[f64]) -> Result<Sweep> {
    sweep(["eta", "d2L_db2"], etas, |eta| Ok(curvature_b(solve_at_w1(lambda, eta)?, 0.0, eta)))
}

/// Unrestricted-AT `∂L/∂b` over a grid of `η₂` with `W₁`, `b` and `η₁` held
/// fixed.
pub fn sweep_unrestricted(w1: f64, b: f64, eta1: f64, lambda: f64, eta2s: &[f64]) -> Result<Sweep> {
    sweep(["eta2", "dL_db"], eta2s, |eta2| Ok(unrestricted_grad_b(w1, b, eta1, eta2, lambda)))
}

/// `n + 1` evenly spaced points from `lo` to `hi`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// `λ = 10^e` for `e` evenly spaced from `lo_exp` to `hi_exp`.
pub fn logspace(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    linspace(lo_exp, hi_exp, n).into_iter().map(|e| 10f64.powf(e)).collect()
}

/// Numbered sweeps with their default grids: 7 is `W₁` over `λ`, 8 is `W₁`
/// over `η`, 9 is the bias curvature over `η` and 10 is the unrestricted
/// `∂L/∂b` over `η₂`.
pub fn figure(number: u32, lambda: f64) -> Result<Sweep> {
    match number {
        7 => sweep_nt_w1(&logspace(-6.0, -1.0, 100)),
        8 => sweep_at_w1(lambda, &linspace(0.0, 1.0, 1000)),
        9 => sweep_curvature(lambda, &linspace(0.0, 1.0, 1000)),
        10 => sweep_unrestricted(5.0, 2.5, 0.5, lambda, &linspace(0.0, 1.5, 150)),
        n => Err(Error::InvalidArgument(format!("no sweep {n}; expected 7, 8, 9 or 10"))),
    }
}

/// `fig{n}.csv`.
pub fn figure_file_name(number: u32) -> String {
    format!("fig{number}.csv")
}

/// The two points as a dataset with two input features.
pub fn two_point_dataset() -> Dataset {
    Dataset::new(array![[-1.0, 0.0], [1.0, 0.0]], vec![0, 1], 2, "two-point", "train")
        .expect("two-point dataset is well formed")
}

/// Single sigmoid neuron `σ(W₁x₁ + W₂x₂ + b)`.
pub fn neuron(w1: f64, w2: f64, b: f64) -> Model {
    let layer = Dense::new(array![[w1, w2]], Array1::from(vec![b]), Activation::Sigmoid).expect("1x2 layer");
    Model::new(vec![layer]).expect("single layer")
}

/// Random start: `W₁ ~ U(0.5, 1.5)`, `W₂ = 0` and `|b| ~ U(0.3, 0.8)` with
/// random sign, so the initial boundary `−b/W₁` is off the ideal one.
pub fn random_neuron(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = rng.random_range(0.5..1.5);
    let b = rng.random_range(0.3..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    neuron(w1, 0.0, b)
}

/// Adversarial-example rule used when training the neuron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TwoPointTrainer {
    /// FGSM with budget `η`.
    RestrictedAt { eta: f64 },
    /// DeepFool without overshoot: both AEs land on the current boundary.
    OnBoundary,
    /// BAT with DeepFool, cutoff and scale `ρ`.
    Bat { rho: f64 },
}

impl TwoPointTrainer {
    fn config(self, run: &TwoPointRun, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(Strategy::Nt, run.max_epochs, run.learning_rate, LossSpec::squared_error(), seed);
        c.batch_size = 2;
        c.optimizer = OptimizerKind::Adam;
        c.l1 = run.lambda;
        match self {
            TwoPointTrainer::RestrictedAt { eta } => {
                c.strategy = Strategy::RestrictedAt;
                c.attack = AttackSpec::fgsm(eta).with_range(None);
            }
            TwoPointTrainer::OnBoundary => {
                c.strategy = Strategy::DfAt;
                c.attack = AttackSpec::deepfool();
                c.attack.df_overshoot = 0.0;
            }
            TwoPointTrainer::Bat { rho } => {
                c.strategy = Strategy::Bat;
                c.attack = AttackSpec::deepfool();
                c.rho = rho;
            }
        }
        c
    }
}

/// Training settings for the convergence comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPointRun {
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Converged once `|b| < b_tol` and `W₁ > w1_min`.
    pub b_tol: f64,
    pub w1_min: f64,
    pub seeds: Vec<u64>,
}

impl Default for TwoPointRun {
    fn default() -> Self {
        Self {
            lambda: 1e-5,
            learning_rate: 0.1,
            max_epochs: 20_000,
            b_tol: 1e-3,
            w1_min: 5.0,
            seeds: (0..5).collect(),
        }
    }
}

/// Epochs until the neuron first meets the convergence threshold, or `None`
/// if it does not within `max_epochs`.
pub fn epochs_to_threshold(trainer: TwoPointTrainer, run: &TwoPointRun, seed: u64) -> Result<Option<usize>> {
    let config = trainer.config(run, seed);
    let mut reached = None;
    train_observed(&config, random_neuron(seed), &two_point_dataset(), &mut |rec, model| {
        let layer = &model.layers()[0];
        if layer.bias[0].abs() < run.b_tol && layer.weight[[0, 0]] > run.w1_min {
            reached = Some(rec.epoch);
            return Ok(ControlFlow::Break(()));
        }
        Ok(ControlFlow::Continue(()))
    })?;
    Ok(reached)
}

/// Mean epochs-to-threshold over `run.seeds`; a run that never converges
/// counts as `max_epochs`, so the mean is then a lower bound. Also returns
/// the number of such runs.
pub fn mean_epochs(trainer: TwoPointTrainer, run: &TwoPointRun) -> Result<(f64, usize)> {
    if run.seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let mut total = 0.0;
    let mut missed = 0;
    for &seed in &run.seeds {
        match epochs_to_threshold(trainer, run, seed)? {
            Some(e) => total += e as f64,
            None => {
                total += run.max_epochs as f64;
                missed += 1;
            }
        }
    }
    Ok((total / run.seeds.len() as f64, missed))
}

/// Seed-averaged convergence speeds of every two-point trainer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// `(η, mean epochs)` for each restricted-AT budget.
    pub restricted: Vec<(f64, f64)>,
    pub on_boundary: f64,
    pub bat: f64,
    /// Runs that hit `max_epochs` without converging, over all trainers.
    pub unconverged: usize,
}

impl ConvergenceReport {
    /// Budget with the fewest mean epochs.
    pub fn best_restricted(&self) -> (f64, f64) {
        self.restricted
            .iter()
            .copied()
            .fold((f64::NAN, f64::INFINITY), |b, r| if r.1 < b.1 { r } else { b })
    }

    pub fn restricted_at(&self, eta: f64) -> Option<f64> {
        self.restricted.iter().find(|r| (r.0 - eta).abs() < 1e-12).map(|r| r.1)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "trainer,eta,mean_epochs")?;
        for (eta, e) in &self.restricted {
            writeln!(out, "restricted-at,{eta},{e}")?;
        }
        writeln!(out, "on-boundary,,{}", self.on_boundary)?;
        writeln!(out, "bat,,{}", self.bat)?;
        Ok(())
    }
}

/// Restricted-AT budgets searched for the best convergence speed.
pub fn default_eta_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Trains every trainer on the two-point problem and averages over seeds.
pub fn convergence_report(run: &TwoPointRun, etas: &[f64], rho: f64) -> Result<ConvergenceReport> {
    let mut unconverged = 0;
    let mut restricted = Vec::with_capacity(etas.len());
    for &eta in etas {
        let (mean, missed) = mean_epochs(TwoPointTrainer::RestrictedAt { eta }, run)?;
        unconverged += missed;
        restricted.push((eta, mean));
    }
    let (on_boundary, missed) = mean_epochs(TwoPointTrainer::OnBoundary, run)?;
    unconverged += missed;
    let (bat, missed) = mean_epochs(TwoPointTrainer::Bat { rho }, run)?;
    unconverged += missed;
    Ok(ConvergenceReport {
        restricted,
        on_boundary,
        bat,
        unconverged,
    })
}

/// Clean and adversarial batches for the neuron, used to compare the closed
/// forms with backpropagation.
pub fn two_point_batches(eta1: f64, eta2: f64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let x = array![[-1.0, 0.0], [1.0, 0.0]];
    let xa = array![[-1.0 + eta1, 0.0], [1.0 - eta2, 0.0]];
    let t = array![[0.0], [1.0]];
    (x, xa, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMBDA: f64 = 1e-5;

    /// `(∂L/∂W₁, ∂L/∂b)` of clean plus adversarial squared error by
    /// backpropagation.
    fn autodiff(w1: f64, b: f64, eta1: f64, eta2: f64) -> (f64, f64) {
        let m = neuron(w1, 0.0, b);
        let (x, xa, t) = two_point_batches(eta1, eta2);
        let loss = LossSpec::squared_error();
        let (_, g) = m.grad_params(&x, &t, &loss).unwrap();
        let (_, ga) = m.grad_params(&xa, &t, &loss).unwrap();
        (
            g.layers[0].weight[[0, 0]] + ga.layers[0].weight[[0, 0]],
            g.layers[0].bias[0] + ga.layers[0].bias[0],
        )
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn nt_root_matches_reference_value() {
        let w = solve_nt_w1(LAMBDA).unwrap();
        assert!((w - 6.447).abs() < 0.005, "{w}");
        assert!(nt_residual(LAMBDA, w).abs() < 1e-10);
    }

    #[test]
    fn nt_root_decreases_with_lambda() {
        let s = sweep_nt_w1(&logspace(-6.0, -1.0, 50)).unwrap();
        assert!(s.rows.windows(2).all(|p| p[1].1 < p[0].1));
        for &(l, w) in &s.rows {
            assert!(nt_residual(l, w).abs() < 1e-10);
        }
    }

    #[test]
    fn nt_residual_has_one_sign_change() {
        let grid = linspace(0.0, BRACKET_HI, 5000);
        let changes = grid
            .windows(2)
            .filter(|p| nt_residual(LAMBDA, p[0]).signum() != nt_residual(LAMBDA, p[1]).signum())
            .count();
        assert_eq!(changes, 1);
    }

    #[test]
    fn nt_without_root_is_an_error() {
        assert!(matches!(solve_nt_w1(1.0), Err(Error::NoBracket { .. })));
        assert!(solve_nt_w1(0.0).is_err());
        assert!(solve_nt_w1(4.0).is_err());
    }

    #[test]
    fn at_without_attack_is_nt() {
        let w = solve_at_w1(LAMBDA, 0.0).unwrap();
        assert!((w - solve_nt_w1(LAMBDA).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn at_on_boundary_matches_closed_form() {
        let w = solve_at_w1(LAMBDA, 1.0).unwrap();
        assert!((w - 6.100).abs() < 0.005, "{w}");
        // 2(1 − σ)²σ = λ; with σ ≈ 1 this is 2e^{−2W₁} ≈ λ.
        let approx = (2.0 / LAMBDA).ln() / 2.0;
        assert!((w - approx).abs() < 0.005, "{w} vs {approx}");
    }

    #[test]
    fn at_roots_have_tiny_residuals() {
        for eta in linspace(0.0, 2.0, 200).into_iter().filter(|&e| e < 2.0) {
            let w = solve_at_w1(LAMBDA, eta).unwrap();
            assert!(at_residual(LAMBDA, eta, w).abs() < 1e-10, "eta {eta}");
        }
    }

    #[test]
    fn swapped_examples_leave_no_positive_root() {
        assert!(matches!(solve_at_w1(LAMBDA, 2.0), Err(Error::NoBracket { .. })));
        assert!(solve_at_w1(LAMBDA, 2.1).is_err());
    }

    #[test]
    fn w1_peaks_just_below_one() {
        let (eta, w) = argmax_at_w1(LAMBDA).unwrap();
        assert!((0.995..1.0).contains(&eta), "{eta}");
        assert!(w > solve_at_w1(LAMBDA, 0.0).unwrap());
    }

    #[test]
    fn eta_sweep_has_a_single_interior_maximum() {
        let s = sweep_at_w1(LAMBDA, &linspace(0.0, 1.0, 1000)).unwrap();
        let (eta, _) = s.argmax().unwrap();
        assert!(eta > 0.0 && eta < 1.0);
        let k = s.rows.iter().position(|r| r.0 == eta).unwrap();
        assert!(s.rows[..=k].windows(2).all(|p| p[1].1 > p[0].1));
        assert!(s.rows[k..].windows(2).all(|p| p[1].1 < p[0].1));
    }

    #[test]
    fn curvature_without_attack_doubles_nt() {
        for (w, b) in [(6.0, 0.0), (3.0, 0.4), (1.0, -0.7)] {
            assert!((curvature_b(w, b, 0.0) - 2.0 * nt_curvature_b(w, b)).abs() < 1e-15);
        }
    }

    #[test]
    fn curvature_at_optimum_rises_then_peaks_inside() {
        let etas = linspace(0.0, 1.0, 100_000);
        let s = sweep_curvature(LAMBDA, &etas).unwrap();
        let c0 = s.rows[0].1;
        assert!(s.rows[1..50_000].iter().all(|r| r.1 > c0));
        let (eta, peak) = s.argmax().unwrap();
        assert!(eta > 0.0 && eta < 1.0, "{eta}");
        assert!(peak > s.rows.last().unwrap().1);
    }

    #[test]
    fn curvature_matches_differentiated_autodiff_gradient() {
        // Richardson-extrapolated central difference of the backprop b-gradient.
        for (w, b, eta) in [(6.0, 0.0, 0.5), (2.0, 0.3, 0.9), (4.0, -0.5, 0.2), (1.5, 0.1, 1.3)] {
            let g = |b| autodiff(w, b, eta, eta).1;
            let d = |h: f64| (g(b + h) - g(b - h)) / (2.0 * h);
            let h = 1e-3;
            let fd = (4.0 * d(h / 2.0) - d(h)) / 3.0;
            let cf = curvature_b(w, b, eta);
            assert!(rel(fd, cf) < 1e-8, "w {w} b {b} eta {eta}: {fd} vs {cf}");
        }
    }

    #[test]
    fn restricted_residual_matches_autodiff() {
        for (w, eta) in [(6.447, 0.0), (3.0, 0.5), (20.0, 0.9), (1.0, 1.7)] {
            let (gw, _) = autodiff(w, 0.0, eta, eta);
            let cf = at_residual(LAMBDA, eta, w);
            assert!(rel(gw + LAMBDA, cf) < 1e-8, "w {w} eta {eta}");
        }
    }

    #[test]
    fn unrestricted_gradient_matches_autodiff() {
        for (w, b, e1, e2) in [(5.0, 2.5, 0.5, 1.5), (5.0, 2.5, 0.5, 0.0), (2.0, -0.3, 1.2, 0.8), (1.0, 0.1, 0.0, 2.0)] {
            let (_, gb) = autodiff(w, b, e1, e2);
            let cf = unrestricted_grad_b(w, b, e1, e2, LAMBDA);
            assert!(rel(gb + LAMBDA * b.signum(), cf) < 1e-8, "{w} {b} {e1} {e2}");
        }
    }

    #[test]
    fn on_boundary_aes_cancel() {
        let (w, b) = (5.0, 2.5);
        let eta2 = 1.0 + b / w;
        let eta1 = 2.0 - eta2;
        let clean = sigmoid(b - w) * dsigmoid(b - w) + (sigmoid(w + b) - 1.0) * dsigmoid(w + b) + LAMBDA;
        assert!((unrestricted_grad_b(w, b, eta1, eta2, LAMBDA) - clean).abs() < 1e-15);
    }

    #[test]
    fn unrestricted_gradient_shape_over_eta2() {
        let g = |e2| unrestricted_grad_b(5.0, 2.5, 0.5, e2, LAMBDA);
        assert!(g(1.5).abs() < 0.6 * g(0.5).abs());
        let s = sweep_unrestricted(5.0, 2.5, 0.5, LAMBDA, &linspace(0.0, 1.5, 1500)).unwrap();
        assert_eq!(s.argmax().unwrap().0, 0.0);
        assert!(s.rows.iter().filter(|r| r.0 <= 1.0).all(|r| r.1 >= 0.95 * g(0.0)));
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(sweep_nt_w1(&[]).is_err());
        assert!(sweep_unrestricted(5.0, 2.5, 0.5, LAMBDA, &[]).is_err());
    }

    #[test]
    fn figure_csv_headers() {
        let mut buf = Vec::new();
        figure(10, LAMBDA).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("eta2,dL_db\n"));
        assert_eq!(text.lines().count(), 152);
        assert!(figure(6, LAMBDA).is_err());
    }

    #[test]
    fn random_neuron_starts_off_boundary() {
        for seed in 0..20 {
            let m = random_neuron(seed);
            let l = &m.layers()[0];
            assert!((0.5..1.5).contains(&l.weight[[0, 0]]));
            assert_eq!(l.weight[[0, 1]], 0.0);
            assert!((0.3..0.8).contains(&l.bias[0].abs()));
        }
    }
}

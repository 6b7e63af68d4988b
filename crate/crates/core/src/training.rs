//! The four training strategies sharing one mini-batch loop: natural
//! training (NT), restricted adversarial training with a norm-budgeted
//! attack, DeepFool adversarial training (DF-AT) and blind adversarial
//! training (BAT).
//!
//! Every adversarial step minimises `L(x) + L(x + δ)` with a single
//! optimiser update on the summed gradients. BAT replaces the raw DeepFool
//! `δ` by its cutoff-scaled version: the batch mean ℓ2 norm becomes the
//! cutoff budget `ε`, longer perturbations are cut to `ε` and everything is
//! then shrunk by `ρ`.

use std::io::Write;
use std::ops::ControlFlow;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{cut, generate, AttackSpec, PerturbationBatch};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{aa_curve, avg_aa};
use crate::nn::{accuracy, encode_labels, Gradients, LossSpec, Model, Optimizer, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Nt,
    RestrictedAt,
    DfAt,
    Bat,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Nt => "nt",
            Strategy::RestrictedAt => "restricted-at",
            Strategy::DfAt => "df-at",
            Strategy::Bat => "bat",
        }
    }
}

/// When to stop before the epoch budget runs out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Monitor {
    FixedEpochs,
    /// Stop once avg-AA(`theta`) under the DeepFool cut curve, measured on
    /// the last `holdout` training examples (which are then not trained
    /// on), varies by less than `tolerance` over `window` epochs.
    AvgAaPlateau {
        window: usize,
        tolerance: f64,
        theta: f64,
        holdout: usize,
    },
}

/// Missing fields in a configuration file take the [`Default`] values:
/// BAT for 10 epochs with Adam at learning rate 1e-3 on softmax
/// cross-entropy with label smoothing 0.1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Inner attack. Restricted AT needs a budgeted ℓ∞ attack; DF-AT and
    /// BAT use an unconstrained one (DeepFool by default).
    pub attack: AttackSpec,
    /// BAT scale factor `ρ`.
    pub rho: f64,
    /// BAT adaptive cutoff; off turns BAT into scaled DF-AT.
    pub cutoff: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossSpec,
    /// Coefficient of an `ℓ1` penalty on all parameters.
    pub l1: f64,
    /// Set from the run-level seed rather than read from the section.
    #[serde(skip)]
    pub seed: u64,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(Strategy::Bat, 10, 1e-3, LossSpec::cross_entropy(0.1), 0)
    }
}

impl TrainConfig {
    pub fn new(strategy: Strategy, epochs: usize, learning_rate: f64, loss: LossSpec, seed: u64) -> Self {
        Self {
            strategy,
            attack: AttackSpec::deepfool(),
            rho: 0.9,
            cutoff: true,
            epochs,
            learning_rate,
            batch_size: 128,
            optimizer: OptimizerKind::Adam,
            loss,
            l1: 0.0,
            seed,
            monitor: Monitor::FixedEpochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1]", self.rho));
        }
        if !(self.l1 >= 0.0) {
            return bad(format!("l1 {} must be >= 0", self.l1));
        }
        self.loss.validate()?;
        self.attack.validate()?;
        match self.strategy {
            Strategy::RestrictedAt if !self.attack.kind.is_constrained() => {
                return bad("restricted AT needs a budgeted attack (fgsm, noise or pgd)".into())
            }
            Strategy::DfAt | Strategy::Bat if self.attack.kind.is_constrained() => {
                return bad(format!("{} needs an unconstrained attack", self.strategy.name()))
            }
            _ => {}
        }
        if let Monitor::AvgAaPlateau { window, tolerance, theta, .. } = self.monitor {
            if window < 2 || !(tolerance >= 0.0) || !(theta > 0.0) {
                return bad("avg-AA plateau needs window >= 2, tolerance >= 0, theta > 0".into());
            }
        }
        Ok(())
    }
}

/// One row of the per-epoch training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub clean_acc: f64,
    /// Mean ℓ2 norm of the generated perturbations before cutoff/scale.
    pub mean_norm: f64,
    /// Mean cutoff budget (BAT), fixed budget (restricted AT), mean raw
    /// norm (DF-AT) or 0 (NT).
    pub eps_budget: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub model: Model,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,clean_acc,mean_norm,eps_budget")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.clean_acc, r.mean_norm, r.eps_budget)?;
        }
        Ok(())
    }
}

/// Result of the cutoff-and-scale transform on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CosBatch {
    pub deltas: PerturbationBatch,
    /// Cutoff budget: the mean ℓ2 norm before cutting.
    pub eps: f64,
}

/// Adaptive cutoff then scale: `ε = mean ‖δ‖₂`, `δ ← ρ·cut(δ, ε)`.
pub fn cos_transform(deltas: &PerturbationBatch, rho: f64) -> Result<CosBatch> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside [0, 1]")));
    }
    let eps = deltas.mean_l2()?;
    Ok(CosBatch {
        deltas: cut(deltas, eps)?.scaled(rho),
        eps,
    })
}

/// Clean-plus-adversarial gradient of one batch.
///
/// The adversarial term averages over the rows with a nonzero perturbation
/// and is weighted by their share of the batch, i.e. it is the mean over the
/// full batch of the per-example AE loss with zero-perturbation rows
/// dropped. Without such rows the result is exactly the clean gradient.
pub fn total_gradient(
    model: &Model,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    deltas: &Array2<f64>,
    loss: &LossSpec,
) -> Result<(f64, Gradients)> {
    let (mut value, mut grads) = model.grad_params(x, targets, loss)?;
    let active: Vec<usize> = deltas
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
        .map(|(i, _)| i)
        .collect();
    if !active.is_empty() {
        let xa = x.select(Axis(0), &active) + &deltas.select(Axis(0), &active);
        let (ae_value, mut ae) = model.grad_params(&xa, &targets.select(Axis(0), &active), loss)?;
        let weight = active.len() as f64 / x.nrows() as f64;
        ae.scale(weight);
        grads.add_assign(&ae);
        value += weight * ae_value;
    }
    Ok((value, grads))
}

fn add_l1(model: &Model, grads: &mut Gradients, l1: f64) {
    if l1 == 0.0 {
        return;
    }
    for (g, layer) in grads.layers.iter_mut().zip(model.layers()) {
        g.weight.zip_mut_with(&layer.weight, |g, &w| *g += l1 * sign(w));
        g.bias.zip_mut_with(&layer.bias, |g, &b| *g += l1 * sign(b));
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Observer verdict after each epoch.
pub type Observer<'a> = dyn FnMut(&EpochRecord, &Model) -> Result<ControlFlow<()>> + 'a;

pub fn train(config: &TrainConfig, model: Model, data: &Dataset) -> Result<TrainReport> {
    train_observed(config, model, data, &mut |_, _| Ok(ControlFlow::Continue(())))
}

/// Runs the configured strategy from `model` for up to `config.epochs`
/// epochs. The observer runs after every epoch and may stop training early.
pub fn train_observed(config: &TrainConfig, mut model: Model, data: &Dataset, observer: &mut Observer) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    let (train_set, holdout) = match config.monitor {
        Monitor::AvgAaPlateau { holdout, .. } => {
            let (t, h) = data.split_tail(holdout)?;
            (t, Some(h))
        }
        Monitor::FixedEpochs => (data.clone(), None),
    };
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let targets = encode_labels(&train_set.labels, model.output_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut plateau: Vec<f64> = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_sum, mut eps_sum, mut batches, mut seen) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for idx in order.chunks(config.batch_size) {
            let xb = train_set.images.select(Axis(0), idx);
            let tb = targets.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();

            let deltas = match config.strategy {
                Strategy::Nt => None,
                Strategy::RestrictedAt => {
                    let d = generate(&model, &xb, &yb, &config.attack, &config.loss, &mut rng)?;
                    norm_sum += d.norms_l2().iter().sum::<f64>();
                    eps_sum += config.attack.budget_or_zero();
                    Some(d.into_deltas())
                }
                Strategy::DfAt | Strategy::Bat => {
                    let raw = generate(&model, &xb, &yb, &config.attack, &config.loss, &mut rng)?;
                    let mean = raw.mean_l2()?;
                    norm_sum += mean * idx.len() as f64;
                    let (cutoff, rho) = match config.strategy {
                        Strategy::Bat => (config.cutoff, config.rho),
                        _ => (false, 1.0),
                    };
                    let d = if cutoff {
                        let cos = cos_transform(&raw, rho)?;
                        eps_sum += cos.eps;
                        cos.deltas
                    } else {
                        eps_sum += mean;
                        raw.scaled(rho)
                    };
                    Some(d.into_deltas())
                }
            };

            let (value, mut grads) = match &deltas {
                Some(d) => total_gradient(&model, &xb, &tb, d, &config.loss)?,
                None => model.grad_params(&xb, &tb, &config.loss)?,
            };
            if !value.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            add_l1(&model, &mut grads, config.l1);
            optimizer.step(&mut model, &grads)?;
            loss_sum += value;
            batches += 1;
            seen += idx.len();
        }

        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            clean_acc: accuracy(&model, &train_set.images, &train_set.labels)?,
            mean_norm: norm_sum / seen as f64,
            eps_budget: eps_sum / batches as f64,
        };
        records.push(record);
        let mut stop = observer(&record, &model)?.is_break();

        if let (Monitor::AvgAaPlateau { window, tolerance, theta, .. }, Some(h)) = (config.monitor, &holdout) {
            let spec = AttackSpec::deepfool();
            let grid: Vec<f64> = (0..=20).map(|i| theta * i as f64 / 20.0).collect();
            let curve = aa_curve(&model, h, &spec, &grid, &config.loss, &mut rng)?;
            plateau.push(avg_aa(&curve, theta)?);
            if plateau.len() >= window {
                let last = &plateau[plateau.len() - window..];
                let (lo, hi) = last.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                stop |= hi - lo < tolerance;
            }
        }
        if stop {
            break;
        }
    }
    Ok(TrainReport { epochs: records, model })
}

fn with_strategy(config: &TrainConfig, strategy: Strategy) -> TrainConfig {
    TrainConfig { strategy, ..config.clone() }
}

pub fn train_nt(config: &TrainConfig, model: Model, data: &Dataset) -> Result<TrainReport> {
    train(&with_strategy(config, Strategy::Nt), model, data)
}

pub fn train_restricted_at(config: &TrainConfig, model: Model, data: &Dataset) -> Result<TrainReport> {
    train(&with_strategy(config, Strategy::RestrictedAt), model, data)
}

pub fn train_df_at(config: &TrainConfig, model: Model, data: &Dataset) -> Result<TrainReport> {
    train(&with_strategy(config, Strategy::DfAt), model, data)
}

pub fn train_bat(config: &TrainConfig, model: Model, data: &Dataset) -> Result<TrainReport> {
    train(&with_strategy(config, Strategy::Bat), model, data)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::nn::Activation;

    fn norms_batch(norms: &[f64]) -> PerturbationBatch {
        let d = Array2::from_shape_fn((norms.len(), 2), |(i, j)| if j == 0 { norms[i] } else { 0.0 });
        PerturbationBatch::new(d, vec![false; norms.len()]).unwrap()
    }

    #[test]
    fn cos_transform_mean_then_cut_then_scale() {
        let out = cos_transform(&norms_batch(&[1.0, 3.0]), 1.0).unwrap();
        assert_eq!(out.eps, 2.0);
        assert_eq!(out.deltas.norms_l2(), &[1.0, 2.0]);
        let out = cos_transform(&norms_batch(&[1.0, 3.0]), 0.9).unwrap();
        assert!((out.deltas.norms_l2()[0] - 0.9).abs() < 1e-15);
        assert!((out.deltas.norms_l2()[1] - 1.8).abs() < 1e-15);
        let zero = cos_transform(&norms_batch(&[1.0, 3.0]), 0.0).unwrap();
        assert!(zero.deltas.deltas().iter().all(|&v| v == 0.0));
        assert!(cos_transform(&PerturbationBatch::zeros(0, 2), 0.9).is_err());
        assert!(cos_transform(&norms_batch(&[1.0]), 1.5).is_err());
    }

    fn toy_data(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((64, 3), |_| rng.random_range(0.0..1.0));
        let labels = x.rows().into_iter().map(|r| usize::from(r[0] + r[1] > 1.0)).collect();
        Dataset::new(x, labels, 2, "toy", "train").unwrap()
    }

    fn toy_model(seed: u64) -> Model {
        Model::init(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn summed_gradient_equals_two_backward_passes() {
        let m = toy_model(1);
        let data = toy_data(2);
        let t = encode_labels(&data.labels, 2);
        let deltas = Array2::from_shape_fn(data.images.dim(), |(i, j)| 0.01 * ((i + j) % 3) as f64 + 0.001);
        let loss = LossSpec::cross_entropy(0.1);
        let (_, total) = total_gradient(&m, &data.images, &t, &deltas, &loss).unwrap();
        let (_, mut clean) = m.grad_params(&data.images, &t, &loss).unwrap();
        let (_, ae) = m.grad_params(&(&data.images + &deltas), &t, &loss).unwrap();
        clean.add_assign(&ae);
        for (a, b) in total.iter().zip(clean.iter()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_epochs_and_bad_rho_are_rejected() {
        let data = toy_data(3);
        let cfg = TrainConfig::new(Strategy::Nt, 0, 1e-2, LossSpec::cross_entropy(0.0), 1);
        assert!(train_nt(&cfg, toy_model(1), &data).is_err());
        let mut cfg = TrainConfig::new(Strategy::Bat, 1, 1e-2, LossSpec::cross_entropy(0.0), 1);
        cfg.rho = 1.5;
        assert!(train(&cfg, toy_model(1), &data).is_err());
    }

    #[test]
    fn reductions_are_bit_identical() {
        let data = toy_data(4);
        let mut cfg = TrainConfig::new(Strategy::Bat, 3, 1e-2, LossSpec::cross_entropy(0.0), 7);
        cfg.batch_size = 16;
        let nt = train_nt(&cfg, toy_model(5), &data).unwrap();
        let mut zero = cfg.clone();
        zero.rho = 0.0;
        assert_eq!(train_bat(&zero, toy_model(5), &data).unwrap().model, nt.model);

        let df = train_df_at(&cfg, toy_model(5), &data).unwrap();
        let mut plain = cfg.clone();
        plain.cutoff = false;
        plain.rho = 1.0;
        assert_eq!(train_bat(&plain, toy_model(5), &data).unwrap().model, df.model);
        assert_ne!(df.model, nt.model);
    }

    #[test]
    fn bat_budget_tracks_mean_norm_before_cut() {
        let data = toy_data(6);
        let mut cfg = TrainConfig::new(Strategy::Bat, 1, 1e-2, LossSpec::cross_entropy(0.0), 3);
        cfg.batch_size = 64;
        let report = train(&cfg, toy_model(2), &data).unwrap();
        let r = report.epochs[0];
        // A single batch: the cutoff budget is the batch mean norm.
        assert!((r.eps_budget - r.mean_norm).abs() < 1e-12);
    }

    #[test]
    fn report_csv_layout() {
        let report = TrainReport {
            epochs: vec![EpochRecord { epoch: 1, loss: 0.3, clean_acc: 0.5, mean_norm: 0.25, eps_budget: 0.2 }],
            model: toy_model(1),
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,clean_acc,mean_norm,eps_budget\n1,0.5,0.25,0.2\n");
    }

    #[test]
    fn observer_can_stop_early() {
        let data = toy_data(8);
        let cfg = TrainConfig::new(Strategy::Nt, 50, 1e-2, LossSpec::cross_entropy(0.0), 1);
        let report = train_observed(&cfg, toy_model(1), &data, &mut |r, _| {
            Ok(if r.epoch == 4 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        })
        .unwrap();
        assert_eq!(report.epochs.len(), 4);
    }

    #[test]
    fn restricted_at_budget_zero_is_nt() {
        let data = toy_data(9);
        let mut cfg = TrainConfig::new(Strategy::RestrictedAt, 2, 1e-2, LossSpec::cross_entropy(0.0), 2);
        cfg.attack = AttackSpec::fgsm(0.0);
        let at = train(&cfg, toy_model(3), &data).unwrap();
        assert_eq!(at.model, train_nt(&cfg, toy_model(3), &data).unwrap().model);
    }
}

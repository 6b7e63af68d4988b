use std::ops::ControlFlow;

use bat_core::attacks::PerturbationBatch;
use bat_core::data::Dataset;
use bat_core::nn::{encode_labels, Activation, LossSpec, Model, OptimizerKind};
use bat_core::theory::{neuron, random_neuron, two_point_batches, two_point_dataset};
use bat_core::training::{cos_transform, train, train_observed, Strategy as Kind, TrainConfig};
use bat_core::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows() -> impl Strategy<Value = Array2<f64>> {
    (1usize..10, 1usize..6).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

proptest! {
    #[test]
    fn adaptive_budget_is_the_mean_pre_cut_norm_and_bounds_every_ae(deltas in rows(), rho in 0.0f64..=1.0) {
        let n = deltas.nrows();
        let mean = deltas
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>() / n as f64;
        let batch = PerturbationBatch::new(deltas, vec![false; n]).unwrap();
        let cos = cos_transform(&batch, rho).unwrap();
        prop_assert!((cos.eps - mean).abs() <= 1e-12 * (1.0 + mean));
        for (row, &norm) in cos.deltas.deltas().rows().into_iter().zip(cos.deltas.norms_l2()) {
            let recomputed = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(recomputed <= rho * cos.eps + 1e-12);
            prop_assert!((recomputed - norm).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_scale_removes_every_perturbation(deltas in rows()) {
        let n = deltas.nrows();
        let cos = cos_transform(&PerturbationBatch::new(deltas, vec![true; n]).unwrap(), 0.0).unwrap();
        prop_assert!(cos.deltas.deltas().iter().all(|&v| v == 0.0));
    }

    /// With inputs on the first axis only, the loss never depends on the
    /// second weight, for clean and shifted batches alike.
    #[test]
    fn off_axis_weight_gradient_vanishes(w1 in -8.0f64..8.0, b in -3.0f64..3.0, eta1 in 0.0f64..2.0, eta2 in 0.0f64..2.0) {
        let model = neuron(w1, 0.0, b);
        let (x, xa, t) = two_point_batches(eta1, eta2);
        for batch in [&x, &xa] {
            let (_, g) = model.grad_params(batch, &t, &LossSpec::squared_error()).unwrap();
            prop_assert!(g.layers[0].weight[[0, 1]].abs() < 1e-8);
        }
    }
}

#[test]
fn empty_batch_is_rejected() {
    let empty = PerturbationBatch::zeros(0, 3);
    assert!(matches!(cos_transform(&empty, 0.9), Err(Error::EmptyBatch)));
}

fn blobs(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 60;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let images = Array2::from_shape_fn((n, 4), |(i, j)| {
        let centre = if j == labels[i] { 0.8 } else { 0.2 };
        centre + rng.random_range(-0.1..0.1)
    });
    Dataset::new(images, labels, 3, "blobs", "train").unwrap()
}

#[test]
fn report_has_one_record_per_epoch_with_nonnegative_budgets() {
    let data = blobs(2);
    for strategy in [Kind::Nt, Kind::DfAt, Kind::Bat] {
        let mut config = TrainConfig::new(strategy, 4, 1e-2, LossSpec::cross_entropy(0.1), 9);
        config.batch_size = 16;
        let model = Model::init(&[4, 8, 3], Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let report = train(&config, model, &data).unwrap();
        assert_eq!(report.epochs.len(), 4);
        for (i, r) in report.epochs.iter().enumerate() {
            assert_eq!(r.epoch, i + 1);
            assert!(r.eps_budget >= 0.0 && r.mean_norm >= 0.0);
            assert!((0.0..=1.0).contains(&r.clean_acc));
        }
        if strategy == Kind::Bat {
            assert!(report.epochs.iter().all(|r| r.eps_budget > 0.0));
        }
    }
}

#[test]
fn natural_training_centres_the_two_point_boundary() {
    for seed in 0..3 {
        let mut config = TrainConfig::new(Kind::Nt, 20_000, 0.1, LossSpec::squared_error(), seed);
        config.batch_size = 2;
        config.optimizer = OptimizerKind::Adam;
        config.l1 = 1e-5;
        let start = random_neuron(seed);
        let b0 = start.layers()[0].bias[0];
        let mut last_b = b0;
        let report = train_observed(&config, start, &two_point_dataset(), &mut |_, m| {
            last_b = m.layers()[0].bias[0];
            Ok(if last_b.abs() < 1e-4 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        })
        .unwrap();
        let layer = &report.model.layers()[0];
        assert!(layer.bias[0].abs() < 1e-3, "seed {seed}: b {} from {b0}", layer.bias[0]);
        assert_eq!(layer.weight[[0, 1]], 0.0);
        assert_eq!(report.model.predict(&two_point_dataset().images).unwrap(), vec![0, 1]);
        let t = encode_labels(&[0, 1], 1);
        assert!(LossSpec::squared_error().value(&report.model.forward(&two_point_dataset().images).unwrap(), &t).unwrap() < 0.5);
    }
}

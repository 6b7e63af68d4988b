mod common;

use bat_core::nn::{encode_labels, finite_diff_check, softmax, Adam, LossSpec};
use common::draw;
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn gradients_match_finite_differences_on_100_random_models() {
    let mut worst = (0.0f64, 0u64);
    for seed in 0..100 {
        let d = draw(seed);
        let targets = encode_labels(&d.labels, d.model.output_dim());
        let err = finite_diff_check(&d.model, &d.x, &targets, &d.loss, 1e-6).unwrap();
        if err > worst.0 {
            worst = (err, seed);
        }
    }
    assert!(worst.0 < 1e-4, "worst relative error {:e} at seed {}", worst.0, worst.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_and_gradients_are_deterministic(seed in any::<u64>()) {
        let d = draw(seed);
        let targets = encode_labels(&d.labels, d.model.output_dim());
        let a = d.model.grad_params(&d.x, &targets, &d.loss).unwrap();
        let b = d.model.clone().grad_params(&d.x, &targets, &d.loss).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert!(a.1.iter().zip(b.1.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert_eq!(d.model.forward(&d.x).unwrap(), d.model.forward(&d.x).unwrap());
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>()) {
        let d = draw(seed);
        let out = d.model.forward(&d.x).unwrap();
        let targets = encode_labels(&d.labels, d.model.output_dim());
        prop_assert!(LossSpec::squared_error().value(&out, &targets).unwrap() >= 0.0);
        if d.model.output_dim() > 1 {
            prop_assert!(LossSpec::cross_entropy(0.0).value(&out, &targets).unwrap() >= 0.0);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 4), 1..8)
    ) {
        let n = rows.len();
        let logits = Array2::from_shape_vec((n, 4), rows.concat()).unwrap();
        for row in softmax(&logits).rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_step_counter_increases_and_moments_mirror_parameters(seed in any::<u64>(), steps in 1usize..6) {
        let d = draw(seed);
        let targets = encode_labels(&d.labels, d.model.output_dim());
        let mut model = d.model.clone();
        let mut adam = Adam::new(1e-3);
        for s in 1..=steps {
            let (_, g) = model.grad_params(&d.x, &targets, &d.loss).unwrap();
            adam.step(&mut model, &g).unwrap();
            prop_assert_eq!(adam.step_count(), s as u64);
        }
        let m = adam.first_moment().unwrap();
        prop_assert_eq!(m.layers.len(), model.layers().len());
        for (g, l) in m.layers.iter().zip(model.layers()) {
            prop_assert_eq!(g.weight.dim(), l.weight.dim());
            prop_assert_eq!(g.bias.len(), l.bias.len());
        }
        prop_assert!(model.params().all(f64::is_finite));
    }
}

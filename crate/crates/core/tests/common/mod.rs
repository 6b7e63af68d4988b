//! Random model draws shared by the gradient checks.

use bat_core::nn::{Activation, Dense, LossSpec, Model};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random network with 1 to 3 layers of at most 32 units, random biases and
/// a batch of inputs with matching targets.
#[derive(Debug, Clone)]
pub struct Draw {
    pub model: Model,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub loss: LossSpec,
}

pub fn draw(seed: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=8)];
    for _ in 1..depth {
        dims.push(rng.random_range(1..=32));
    }
    let classes = rng.random_range(1..=5usize);
    dims.push(classes);
    let hidden = [Activation::Relu, Activation::Sigmoid, Activation::Identity][rng.random_range(0..3)];
    let cross_entropy = classes > 1 && rng.random_bool(0.5);
    let output = if cross_entropy { Activation::Identity } else { [Activation::Sigmoid, Activation::Identity][rng.random_range(0..2)] };
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let scale = 1.0 / (w[0] as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((w[1], w[0]), || rng.random_range(-2.0 * scale..2.0 * scale));
            let bias = Array1::from_shape_simple_fn(w[1], || rng.random_range(-0.5..0.5));
            Dense::new(weight, bias, if i == dims.len() - 2 { output } else { hidden }).unwrap()
        })
        .collect();
    let model = Model::new(layers).unwrap();
    let n = rng.random_range(1..=6);
    let x = Array2::from_shape_simple_fn((n, dims[0]), || rng.random_range(0.0..1.0));
    let k = model.num_classes();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    let loss = if cross_entropy {
        LossSpec::cross_entropy([0.0, 0.1][rng.random_range(0..2)])
    } else {
        LossSpec::squared_error()
    };
    Draw { model, x, labels, loss }
}

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::activation::Activation;
use super::loss::LossSpec;
use crate::error::{Error, Result};

/// One fully connected layer, `a = act(x Wᵀ + b)` with `W` stored `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Ordered stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, needed for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Final post-activation output.
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("model has at least one layer")
    }

    /// Final pre-activation, the quantity classification decisions are made on.
    pub fn scores(&self) -> &Array2<f64> {
        self.pre.last().expect("model has at least one layer")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.input
    }
}

/// Parameter gradients laid out like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weight *= factor;
            g.bias *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// All entries in declaration order (per layer: weight row-major, then bias).
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(g.bias.iter()).copied())
    }
}

impl Model {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    layer: i + 1,
                    expected: pair[1].input_dim(),
                    got: pair[0].output_dim(),
                });
            }
        }
        let model = Self { layers };
        if !model.params().all(f64::is_finite) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    /// Randomly initialised network with layer widths `dims` (input first).
    /// Rectifier layers use He-uniform weights, the rest Glorot-uniform;
    /// biases start at zero.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let act = if i == last { output } else { hidden };
                let limit = match act {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit));
                Dense::new(weight, Array1::zeros(fan_out), act)
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Number of classes the model separates; a single output is binary.
    pub fn num_classes(&self) -> usize {
        self.output_dim().max(2)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a_in = post.last().unwrap_or(x);
            let z = a_in.dot(&layer.weight.t()) + &layer.bias;
            post.push(layer.activation.apply(&z));
            pre.push(z);
        }
        let cache = ForwardCache {
            input: x.clone(),
            pre,
            post,
        };
        if !cache.output().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("forward output".into()));
        }
        Ok(cache)
    }

    /// Model outputs `(n, output_dim)` after the final activation.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.post.pop().expect("non-empty"))
    }

    /// Final pre-activations `(n, output_dim)`.
    pub fn scores(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.pre.pop().expect("non-empty"))
    }

    /// Predicted classes. A single-output model predicts class 1 where its
    /// final pre-activation is positive (output above 1/2 for a sigmoid
    /// unit); wider models predict the arg-max.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(predict_from_scores(&self.scores(x)?))
    }

    /// Loss and parameter gradients on one batch.
    pub fn grad_params(&self, x: &Array2<f64>, targets: &Array2<f64>, loss: &LossSpec) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(x)?;
        let (value, d_out) = loss.value_and_grad(cache.output(), targets)?;
        let (grads, _) = self.backward(&cache, d_out, true, false);
        Ok((value, grads.expect("requested")))
    }

    /// Gradient of the batch loss with respect to the inputs.
    pub fn grad_input(&self, x: &Array2<f64>, targets: &Array2<f64>, loss: &LossSpec) -> Result<Array2<f64>> {
        let cache = self.forward_cached(x)?;
        let (_, d_out) = loss.value_and_grad(cache.output(), targets)?;
        let (_, dx) = self.backward(&cache, d_out, false, true);
        Ok(dx.expect("requested"))
    }

    /// Vector-Jacobian product of the final pre-activations: for each row
    /// `i`, `Σ_k seed[i,k] ∂scores[i,k]/∂x[i,·]`.
    pub fn score_vjp(&self, cache: &ForwardCache, seed: &Array2<f64>) -> Array2<f64> {
        let d_first = self.score_vjp_first_layer(cache, seed);
        d_first.dot(&self.layers[0].weight)
    }

    /// Like [`Model::score_vjp`] but stops at the first layer's
    /// pre-activation. Input gradients are `result · W₁`, so their squared
    /// norms follow from the Gram matrix `W₁ W₁ᵀ` without materialising them.
    pub fn score_vjp_first_layer(&self, cache: &ForwardCache, seed: &Array2<f64>) -> Array2<f64> {
        let mut dz = seed.clone();
        for l in (1..self.layers.len()).rev() {
            let mut da = dz.dot(&self.layers[l].weight);
            let prev = &self.layers[l - 1];
            prev.activation
                .backprop_in_place(&mut da, &cache.pre[l - 1], &cache.post[l - 1]);
            dz = da;
        }
        dz
    }

    pub fn first_layer_gram(&self) -> Array2<f64> {
        let w = &self.layers[0].weight;
        w.dot(&w.t())
    }

    fn backward(
        &self,
        cache: &ForwardCache,
        d_out: Array2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<Gradients>, Option<Array2<f64>>) {
        let mut grads = want_params.then(|| Vec::with_capacity(self.layers.len()));
        let mut upstream = d_out;
        let mut dx = None;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            layer
                .activation
                .backprop_in_place(&mut upstream, &cache.pre[l], &cache.post[l]);
            let dz = upstream;
            if let Some(g) = grads.as_mut() {
                let a_in = if l == 0 { &cache.input } else { &cache.post[l - 1] };
                g.push(DenseGrad {
                    weight: dz.t().dot(a_in),
                    bias: dz.sum_axis(Axis(0)),
                });
            }
            if l == 0 {
                if want_input {
                    dx = Some(dz.dot(&layer.weight));
                }
                break;
            }
            upstream = dz.dot(&layer.weight);
        }
        let grads = grads.map(|mut g| {
            g.reverse();
            Gradients { layers: g }
        });
        (grads, dx)
    }
}

pub fn predict_from_scores(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            if row.len() == 1 {
                usize::from(row[0] > 0.0)
            } else {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            }
        })
        .collect()
}

/// Fraction of rows whose prediction matches `labels`.
pub fn accuracy(model: &Model, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if x.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs vs {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pred = model.predict(x)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

//! Dense feed-forward networks with hand-written reverse-mode gradients.

mod activation;
pub mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod optim;

pub use activation::{sigmoid, Activation};
pub use gradcheck::finite_diff_check;
pub use loss::{encode_labels, softmax, LossKind, LossSpec};
pub use model::{accuracy, predict_from_scores, Dense, DenseGrad, ForwardCache, Gradients, Model};
pub use optim::{adam_step, Adam, Optimizer, OptimizerKind, Sgd};

//! Linear softmax classifier trained with transport-based losses.

pub mod eval;
pub mod loss;
pub mod model;
pub mod train;

pub use eval::{binary_auc, evaluate, top_k_cost, top_k_indices, EvalReport};
pub use loss::{chain_gradient, combined_loss, kl_loss, softmax_backward, Loss, LossConfig, LossKind, LossValue};
pub use model::{argmax, softmax, LinearSoftmaxModel};
pub use train::{batch_gradient, train_from, train_sgd, Dataset, LogEntry, TrainConfig, TrainOutput};

//! Dense numeric core: matrices, MLP layers with exact manual backprop,
//! softmax cross-entropy, and Adam with decoupled weight decay.

mod layers;
mod loss;
mod matrix;
mod optim;

pub use layers::{linear_forward, relu_backward, relu_forward, Dense, Mlp, MlpCache, ParamSet};
pub use loss::{
    argmax, argmax_rows, ce_logit_grad, cross_entropy, log_softmax_row, softmax, softmax_ce,
    softmax_in_place, PROB_FLOOR,
};
pub use matrix::{dot, norm, Matrix};
pub use optim::{adam_step, AdamConfig};

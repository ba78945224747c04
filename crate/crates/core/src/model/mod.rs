//! From-scratch two-layer MLP: Glorot initialization, ReLU + inverted
//! dropout, softmax cross-entropy with backprop, Adam, and an
//! early-stopping local training loop.

mod adam;
mod net;
mod params;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use net::{evaluate, forward, loss_and_grads, EvalResult, ForwardMode};
pub use params::{init_params, Dims, ParamSet};
pub use train::{train_local, EpochEval, Schedule, TrainReport};

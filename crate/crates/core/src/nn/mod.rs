//! Minimal from-scratch neural-network engine.
//!
//! Dense f64 tensors, hand-wired layers with analytic backward passes, ADAM,
//! a piecewise-constant LR schedule, early stopping, and a binary checkpoint
//! format. The two network architectures in this crate (segmentation,
//! candidate classification) are wired explicitly from these pieces; there is
//! no general autodiff graph.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use layers::{
    resize_bilinear, BatchNorm2d, BilinearResize, Conv2d, GlobalAvgPool, Linear, MaxPool2d,
    ParamRef, ParamTensor, Relu,
};
pub use loss::{median_frequency_weights, softmax_probs, weighted_softmax_ce};
pub use optim::{early_stop, lr_piecewise, Adam, TrainSchedule};
pub use tensor::Tensor4;

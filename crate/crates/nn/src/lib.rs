//! Convolutional network primitives for CPU training and inspection.
//!
//! Every layer caches what it needs during [`Layer::forward`] and implements
//! its own [`Layer::backward`]; composite blocks are built by chaining layers
//! or by writing a small `Layer` impl that routes gradients between children.
//! Graphs are generic over [`Real`] so the same construction runs in `f32` for
//! training and in `f64` for finite-difference audits.

pub mod activation;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod init;
pub mod layer;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod pool;
pub mod real;
pub mod tensor;

pub use activation::{sigmoid, Relu, Sigmoid, Tanh};
pub use conv::{Conv2d, ConvTranspose2d};
pub use dropout::Dropout;
pub use layer::{count_weights, join_name, zero_grads, Layer, Mode, Param, ParamKind, ParamVisitor, Sequential};
pub use loss::{bce_with_logits, softmax, softmax_cross_entropy, softmax_rows};
pub use norm::BatchNorm2d;
pub use optim::{Adam, Optimizer, Sgd};
pub use pool::{GlobalAvgPool, MaxPool2d};
pub use real::Real;
pub use tensor::{Shape, Tensor};

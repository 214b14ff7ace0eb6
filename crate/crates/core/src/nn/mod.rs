//! Dense tensors, layer kernels and reverse-mode differentiation for
//! sequential convolutional networks.

pub mod kernels;
pub mod loss;
mod network;
mod tensor;

use thiserror::Error;

pub use kernels::{
    conv2d_forward, dense_forward, depthwise_forward, softmax_forward as softmax, Padding,
};
pub use loss::{categorical_crossentropy, crossentropy_with_grad, mse, mse_with_grad, one_hot};
pub use network::{
    dropout, infer_shapes, param_name, separable_conv2d_forward, Gradients, LayerSpec, Mode,
    Network, ParamMap, Tape,
};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer {0}: {1}")]
    InvalidLayer(usize, String),
}

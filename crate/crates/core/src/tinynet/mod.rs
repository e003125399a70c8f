//! Minimal differentiable network stack in 64-bit floats: tensors,
//! convolution, pooling, fully-connected layers, RoI pooling, the losses used
//! by the detection cascades, SGD with momentum and finite-difference
//! gradient checking.
//!
//! The layer set is closed and every operation is deterministic: identical
//! inputs and weights produce bit-identical outputs.

mod gradcheck;
mod layers;
mod loss;
mod net;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{Init, Layer, LayerSpec, Param};
pub use loss::{binary_xent_sum, smooth_l1, softmax, softmax_xent, BinaryLabel, LossBundle};
pub use net::{backbone_spec, HeadSpec, NetSpec, Network, Trace};
pub use tensor::Tensor;

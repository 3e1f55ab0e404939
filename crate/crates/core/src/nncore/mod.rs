//! Neural-network core: tensors, layer primitives, the four model
//! architectures with exact backpropagation, and the finite-difference
//! gradient checker.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use layers::{
    cross_entropy, predict_class, softmax, softmax_cross_entropy_grad, Activation, GateParams,
    LstmParams,
};
pub use model::{
    model_backward, model_forward, predict, true_length, ArchParams, Architecture, DenseParams,
    ForwardCache, ModelError, ModelSpec, ParamSet, RecurrentParams, OOV_ID, PAD_ID,
};
pub use tensor::{Scalar, Tensor};

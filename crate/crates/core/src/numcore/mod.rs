//! Dense-tensor numerics: the tensor type, differentiable layers, and the
//! finite-difference gradient checker. Everything is `f64` and layouts are
//! row-major `(batch, height, width, channels)`.

pub mod gradcheck;
pub mod layers;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, WorstElement, DEFAULT_STEP, DEFAULT_TOL};
pub use layers::{
    conv2d_backward, conv2d_forward, conv_out_dim, fc_backward, fc_forward, relu, relu_backward,
    sigmoid, sigmoid_backward, upsample2x_backward, upsample2x_nearest, ConvGrads, ConvParams,
    FcGrads, FcParams,
};
pub use tensor::{NumError, Tensor};

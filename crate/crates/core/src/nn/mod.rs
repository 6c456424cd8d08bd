//! Minimal dense-array kernel with reverse-mode gradients.

mod gradcheck;
mod graph;
mod layers;
mod loss;
mod matrix;
mod params;
mod real;

pub use gradcheck::{grad_check, grad_check_reference, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use layers::{encoder_block_forward, sinusoidal_positions, EncoderBlockParams, EncoderDims, Linear};
pub use loss::{cross_entropy_loss, mean_squared_error, mse_loss, softmax};
pub use matrix::{gemm, matmul, Matrix, Trans};
pub use params::{xavier_uniform, Gradients, ParamId, ParamStore};
pub use real::Real;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("class label {0} out of range")]
    Label(usize),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operation is not deterministic; disable dropout for gradient checks")]
    NonDeterministic,
}

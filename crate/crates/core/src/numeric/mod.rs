//! Dense f64 building blocks with hand-written backward passes.
//!
//! Matrices are `ndarray::Array2<f64>` with one row per frame. Every forward
//! op that the network uses has a matching `*_backward` that maps an upstream
//! gradient to gradients of its inputs and parameters.

mod adam;
mod gradcheck;
mod ops;
mod param;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{
    affine, affine_backward, attention, attention_backward, avg_pool_1d, avg_pool_1d_backward,
    layer_norm, layer_norm_rows, layer_norm_rows_backward, pool_window, sigmoid, softmax,
    softmax_rows, tanh_backward, AttentionCache, LayerNormCache,
};
pub use param::{xavier_bound, ParamTensor};

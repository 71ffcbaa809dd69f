//! Minimal reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! The crate provides a tape ([`Graph`]), named parameters with optimizer state
//! ([`ParameterStore`]), the AMSGrad optimizer, common layers (dense, GRU, LSTM,
//! multi-head attention, causal dilated convolution, layer norm), and a
//! central-difference gradient checker.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport};
pub use graph::{AttentionMap, Graph, Mode, Var, GATHER_ZERO};
pub use layers::{CausalConv1d, Dense, GruCell, LayerNorm, LstmCell, MultiHeadAttention};
pub use optim::AmsGrad;
pub use params::{Gradients, ParamCheckpoint, ParameterStore, StoredParam};
pub use tensor::Tensor;

/// Negative slope of every leaky ReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.01;

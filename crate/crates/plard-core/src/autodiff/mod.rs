//! Minimal reverse-mode differentiable tensor engine.
//!
//! Everything is dense 64-bit floats in `(batch, channels, height, width)`
//! layout. A [`Graph`] is a write-once tape: ops append nodes, [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients. Trainable tensors live
//! in a [`ParameterStore`] and are bound into each graph as leaves, so one
//! store can drive many forward/backward passes.
//!
//! Single-graph execution is single-threaded and deterministic: identical
//! seeds and inputs give bit-identical forward values and gradients.

mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckEntry, GradCheckReport, DEFAULT_FD_STEP};
pub use graph::{Graph, ParamBinding, Var};
pub use layers::ConvLayer;
pub use params::{Init, ParameterStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::{Shape, Tensor, TensorError};

/// Epsilon added inside the base-10 log of the cross-entropy loss.
pub const LOG_EPS: f64 = 1e-12;

//! Minimal differentiable multilayer perceptron.
//!
//! Networks are stacks of affine layers with per-layer activations. A forward
//! pass records a [`Tape`] of layer inputs and pre-activations; a backward pass
//! consumes it together with `d loss / d output` and accumulates parameter
//! gradients into a [`GradSet`]. Loss heads (policy, value, discriminator) are
//! differentiated analytically with respect to network outputs by the modules
//! that define them.

mod optim;
mod params;

pub use optim::{apply_step, OptimizerKind, OptimizerState};
pub use params::{Activation, GradSet, Layer, LayerGrad, ParamSet, Tape};

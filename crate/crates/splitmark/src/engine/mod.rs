//! Minimal differentiable neural-network engine.
//!
//! Tensors, layers, softmax cross-entropy and plain SGD, with gradients
//! available for both parameters and inputs. Everything runs in f32 on a
//! single thread per stack, in a fixed operation order, so results are
//! reproducible down to the bit.

pub mod layer;
pub mod stack;
pub mod tensor;

pub use layer::{Layer, LayerSpec};
pub use stack::{argmax_rows, softmax_cross_entropy, GradientBundle, LayerStack, StackSpec, Trace};
pub use tensor::Tensor;

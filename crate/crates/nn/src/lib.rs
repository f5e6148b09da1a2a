//! Reverse-mode automatic differentiation for small 3-D convolutional
//! networks operating on single instances laid out as `[C, D, H, W]`.
//!
//! The engine is intentionally narrow: it provides exactly the layers the
//! translation and super-resolution networks need, runs single-threaded and
//! is bitwise deterministic, and is generic over `f32` (training) and `f64`
//! (gradient verification).

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, PadMode, Var};
pub use optim::{Adam, AdamConfig, Sgd, SgdConfig};
pub use params::{Binding, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;

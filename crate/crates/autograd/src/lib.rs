//! Small reverse-mode automatic differentiation engine for volumetric
//! networks: grouped 3D convolution, batch/layer normalization, linear
//! layers and multi-head attention, generic over `f32` and `f64`.

pub mod attention;
pub mod conv;
pub mod graph;
pub mod layers;
pub mod norm;
pub mod params;
pub mod real;

pub use graph::{Gradients, Graph, Mode, Var};
pub use layers::{BatchNorm, Conv, ConvSpec, Init, LayerNorm, Linear};
pub use params::{BufferId, NamedTensor, ParamId, ParamStore, StatUpdate};
pub use real::Real;

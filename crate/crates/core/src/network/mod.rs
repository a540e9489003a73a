//! Slice-attention registration network.
//!
//! A row-token transformer scores every stack pixel; the weighted stack is
//! lifted to a volume by a `K → D` convolution and encoded by a 3D ResNet-10.
//! A second ResNet-10 encodes the reference volume; the concatenated
//! features go through ResNeXt blocks and a linear head that outputs the six
//! rigid parameters.

pub mod checkpoint;
pub mod config;
pub mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use model::{count_parameters, Batch, Forward, Model, Network, ResNet10, ScoreMode, Scorer};

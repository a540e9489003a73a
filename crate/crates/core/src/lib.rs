pub mod acquisition;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod network;
pub mod training;
pub mod volume;

pub use error::{Result, SvrError};

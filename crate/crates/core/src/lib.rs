pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod dblrnet;
pub mod dispnet;
pub mod error;
pub mod events;
pub mod geometry;
pub(crate) mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod perceptual;
pub mod plot;
pub mod tensor;
pub mod train;

pub use error::{Result, StedError};

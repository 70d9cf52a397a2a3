pub mod bps;
pub mod cond;
pub mod error;
pub mod evaluator;
pub mod grasp;
pub mod nn;
pub mod pipeline;
pub mod refine;
pub mod sampler;
pub mod toyworld;

pub use error::{Error, Result};

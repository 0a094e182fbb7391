pub mod analysis;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod network;
pub mod noise;
pub mod solvers;

pub use error::{Error, Result};

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod eval;
pub mod kendall;
mod error;
pub mod set_blocks;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};

pub mod blocks;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod moco;
pub mod nce;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Result, VinceError};

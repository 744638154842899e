pub mod error;
pub mod matrix;
pub mod quant_config;
pub mod quantizer;

pub use error::{MixqError, Result};
pub use matrix::Matrix;
pub use quant_config::QuantConfig;
pub mod adapters;
pub mod workbench;
pub mod pruner;
pub mod costmodel;
pub mod pareto;
pub mod surrogate;
pub mod autoloop;
pub mod pipeline;

pub mod baselines;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use config::{Ablations, ModelConfig};
pub use error::{Error, Result};

pub mod augmentation;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod label_space;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

pub mod cli;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod runtime;
pub mod trainer;

pub use error::{Error, Result};

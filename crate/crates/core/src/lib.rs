pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod stratify;
pub mod train;

pub use error::{Error, Result};
pub use model::{ChangeVit, ModelConfig};

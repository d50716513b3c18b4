pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod sampler;
pub mod scalar;
pub mod seed;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};

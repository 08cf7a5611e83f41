pub mod color_ops;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod predictor;
pub mod raster;
pub mod synthetic;
pub mod training;
pub mod weights;

pub use error::{Error, Result};

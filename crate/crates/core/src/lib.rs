pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod pnm;
pub mod raster;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

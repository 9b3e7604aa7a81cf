//! Pose forecasting for small pedestrian groups conditioned on nearby vehicles.

pub mod autodiff;
pub mod dct;
pub mod error;
pub mod io;
pub mod kdtree;
pub mod metrics;
pub mod model;
pub mod segment;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};

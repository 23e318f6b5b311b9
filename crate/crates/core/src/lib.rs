pub mod blocks;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod imagebuf;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod profiler;
pub mod rain;
pub mod trainer;

pub use error::{Error, Result};

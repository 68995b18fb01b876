pub mod assignment;
pub mod cli;
pub mod densitymap;
pub mod discovery;
pub mod error;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod scenegen;

pub use error::{Error, Result};

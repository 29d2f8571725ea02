pub mod backbone;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod runner;
pub mod training;
pub mod util;

pub use error::{Error, Result};

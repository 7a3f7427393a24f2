pub mod ablation;
pub mod coords;
pub mod data;
pub mod encoder;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
mod error;
pub mod nn;
pub mod pyramid;
pub mod query;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

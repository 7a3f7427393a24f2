//! File formats: checkpoints, NetPBM rasters and run configurations.

pub mod checkpoint;
pub mod config;
pub mod netpbm;

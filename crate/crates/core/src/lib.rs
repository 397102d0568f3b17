pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod grid;
pub mod layer;
pub mod lstm;
pub mod metrics;
pub mod network;
pub mod presets;
pub mod tanh;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

//! Interference-alignment feasibility, beamformer construction and sum-rate
//! evaluation for two-cell reverse-TDD MIMO networks.
//!
//! One cell (α) runs downlink while the neighbouring cell (β) runs uplink, so
//! the α users hear the β users and the β base station hears the α base
//! station.

pub mod beamform;
pub mod error;
pub mod evaluate;
pub mod feasibility;
pub mod format;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
pub use model::{CMatrix, ChannelSet, DofAllocation, NetworkConfig, RngStream};

//! Discrete-event simulator for the IAMAC cross-layer MAC protocol for
//! wireless sensor networks, with S-MAC and Adaptive S-MAC baselines.

pub mod channel;
pub mod energy;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod frame;
pub mod harness;
pub mod iamac;
pub mod metrics;
pub mod network;
pub mod packet;
pub mod recovery;
pub mod routing;
pub mod scenario;
pub mod smac;

pub use error::{Error, Result};

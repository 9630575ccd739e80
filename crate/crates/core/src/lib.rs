//! Transmit-power minimization for multi-user MISO downlinks with dynamic
//! metasurface antennas (DMAs), plus fully digital and unconstrained-weight
//! baselines and a Monte-Carlo experiment harness.

pub mod beamform;
pub mod channel;
pub mod dma;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod sdp;

pub use error::{Error, Result};

//! Discrete-time quantum filtering and quantum risk-sensitive estimation for a
//! two-level atom coupled to a discretized field.

pub mod dp;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod matcore;
pub mod model;
pub mod oracle;
pub mod robustness;
pub mod sampler;

pub use error::{Error, Result};

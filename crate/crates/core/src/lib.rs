//! Numerical laboratory for cone conditions, exponential separation and
//! omega-limit structure of almost-periodically forced monotone systems.

pub mod cocycle;
pub mod cones;
pub mod error;
pub mod forcing;
pub mod harness;
pub mod linalg;
pub mod omega;
pub mod ode;
pub mod parabolic;
pub mod quadrature;
pub mod separation;
pub mod system;
pub mod tridiag;

pub use error::{Error, Result};

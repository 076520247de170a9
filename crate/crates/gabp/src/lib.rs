//! Gaussian belief propagation on pairwise models, with convergence
//! certificates that every node can check from its own neighborhood.
//!
//! The crate covers two model classes that share one message-passing engine:
//!
//! * linear Gaussian measurement models, where each edge carries a vector
//!   observation `y = A_ji x_i + A_ij x_j + z` with Gaussian noise, and
//! * Gaussian Markov random fields given by an information matrix with unit
//!   diagonal and a potential vector.
//!
//! Modules:
//!
//! * [`numerics`]: dense kernels and every tolerance used by the crate.
//! * [`model`]: model types, validation, generators, JSON persistence.
//! * [`engine`]: synchronous-flooding belief propagation.
//! * [`convergence`]: message-recursion fixed points, per-node spectral
//!   certificates, centralized baselines, walk-summability.
//! * [`oracle`]: exact marginals by direct solves, used as ground truth.
//! * [`netsim`]: a round-based network simulation that restricts every
//!   payload to graph edges and logs the traffic.

pub mod convergence;
pub mod engine;
mod error;
#[cfg(test)]
pub(crate) mod fixtures;
pub mod model;
pub mod netsim;
pub mod numerics;
pub mod oracle;

pub use error::Error;
pub use numerics::{Matrix, Vector};

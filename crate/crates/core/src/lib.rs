//! Simulation and analysis of the power-law stochastic dynamic
//!
//! ```text
//! dv = -H v dt + sqrt(eta * Σ_g * (1 + vᵀ Σ_H v)) dB
//! ```
//!
//! that models SGD near a minimum with state-dependent gradient noise.
//! The crate covers the stationary power-law density, contraction and
//! ergodicity constants, path simulation (continuous Euler–Maruyama and the
//! frozen-coefficient discrete chain), first exit times by Monte Carlo,
//! quadrature and a boundary-value solve, and the metrics used to compare
//! them. The `powerlaw` binary drives everything from JSON configs.

pub mod cli;
pub mod error;
pub mod exit;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod stationary;

pub use error::{Error, Result};

//! Finite-temperature sampling of neural network parameters with a
//! Nosé-Hoover chain thermostat, together with the optimizer baseline,
//! data handling, ensemble aggregation and diagnostics around it.

pub mod dynamics;
pub mod error;
pub mod net;
pub mod potential;
pub mod rng;

pub use error::{Error, Result};
pub mod data;
pub mod optimize;
pub mod ensemble;
pub mod diagnostics;
pub mod trajectory;

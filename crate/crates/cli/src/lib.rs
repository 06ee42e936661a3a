//! Config-driven experiment runner around the `simmering` library.
//!
//! A run directory always contains `config.toml` (the resolved config) and
//! `manifest.json` (code version, seeds, config hash), followed by
//! per-replicate `replicate_NNN/` directories and pooled outputs.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;

pub use error::{CliError, Result};

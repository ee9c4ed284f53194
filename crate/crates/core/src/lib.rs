//! Synthetic survey populations from demographic personas.
//!
//! Persona densities come from a chain of conditionals, optionally raked to
//! benchmark marginals; per-persona response profiles come from a pluggable
//! backend and can be calibrated to benchmark response shares. The
//! `evaluate` module scores any result against a benchmark.

pub mod calibrate;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod llmclient;
pub mod persona;
pub mod pipeline;
pub mod prior;
pub mod respond;
pub mod schema;

pub use error::{Error, Result};

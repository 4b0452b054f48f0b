//! Toolkit for quantifying how much spatial context around a focal pixel
//! improves ground-temperature prediction.
//!
//! The pipeline: generate synthetic scenes with a known spatial-coupling
//! scale (`synth`), derive terrain and solar feature layers (`terrain`,
//! `solar`, `features`), cut the layers into labeled tiles (`dataset`),
//! train one regression CNN per tile size (`nn`), and measure how test
//! error decays and saturates with tile size (`sweep`).
//!
//! Every stage is deterministic given its seed; see the `examples/`
//! directory for one runnable program per capability.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod features;
pub mod grid;
pub mod nn;
pub mod solar;
pub mod sweep;
pub mod synth;
pub mod terrain;

pub use error::{Error, Result};
pub use grid::{Grid, GridStack};

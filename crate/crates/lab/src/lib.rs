//! Experiments, file formats and the `spcoal` command line on top of the
//! `spatial-coalescent` core.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kingman;
pub mod stats;

pub use error::{LabError, LabResult};

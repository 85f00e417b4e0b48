//! Command-line front end for `diffreg`: synthetic data, registration,
//! transport, preconditioner studies and scaling benchmarks.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod report;
pub mod volume;

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use volume::VolumeFile;

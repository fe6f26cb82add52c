//! Batch front end for `gateseg-core`: manifests, mask and feature sources,
//! report writers and the subcommands behind the `gateseg` binary.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod report;
pub mod source;

pub use error::{HarnessError, Result};

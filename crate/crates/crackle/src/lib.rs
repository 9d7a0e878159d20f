//! Simulation, statistics and file formats around `crackle-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod plot;
pub mod verify;

pub use crackle_core as core;
pub use error::{Error, Result};

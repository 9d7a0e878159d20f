//! Core algorithms for simulating topological crackle: persistence diagrams of
//! Čech filtrations built from point clouds far from the origin.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the experiment
//! harness and the command line live in the `crackle` companion crate.
#![no_std]

extern crate alloc;

pub mod error;
pub mod geom;
pub mod limits;
pub mod math;
pub mod model;
pub mod ph;
pub mod rng;

pub use error::{Error, Result};

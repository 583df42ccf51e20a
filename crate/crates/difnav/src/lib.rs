//! Instruction-conditioned diffusion policy for continuous grid navigation.
//!
//! The crate is organized bottom-up: `gradcore` provides autodiff and
//! optimization, `navsim` the simulator and expert, `instructgen` synthetic
//! instructions and datasets, `encoder`/`diffpolicy`/`progress` the model,
//! and `trainer`/`evalkit` the training and evaluation loops.

pub mod diffpolicy;
pub mod encoder;
pub mod error;
pub mod gradcore;
pub mod instructgen;
pub mod navsim;
pub mod progress;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

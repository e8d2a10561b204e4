//! Simulation and verification toolkit for reaction-diffusion systems with an
//! internal-energy variable and an entropy/entropy-production structure.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod entropy;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod inequalities;
pub mod reaction;
pub mod simulator;

pub use error::{Error, Result};

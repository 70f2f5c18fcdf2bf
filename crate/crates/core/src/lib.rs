//! Deterministic simulator and verification toolkit for the
//! Boltzmann-Fermi-Dirac equation in low-temperature scaling regimes.

pub mod collision;
pub mod entropy;
pub mod equilibria;
pub mod error;
pub mod hydro_limit;
pub mod kinetic_solver;
pub mod oracles;
pub mod par;
pub mod phase_space;
pub mod wave_solver;

pub use error::{Error, Result};

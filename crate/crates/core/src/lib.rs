//! Isothermal self-gravitating hydrodynamics with three interchangeable
//! solvers: a physics-informed neural network, a Lax finite-difference
//! scheme with spectral gravity, and single-mode linear theory.

pub mod fd;
pub mod grinn;
pub mod harness;
pub mod io;
pub mod linear_theory;
pub mod neural;
pub mod units;

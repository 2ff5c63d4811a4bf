//! Stochastic Lagrangian Monte Carlo solver for Lévy-driven (fractal)
//! incompressible Navier-Stokes equations on the periodic torus, with the
//! deterministic spectral machinery used to check it.

pub mod cli;
pub mod error;
pub mod fields;
pub mod levy_sim;
pub mod mc;
pub mod rng;

pub use error::{FnseError, Result};
pub mod feynman_kac;
pub mod fnse_solver;
pub mod reference_spectral;
pub mod report;
pub mod sde_flow;
pub mod theory_checks;

mod par;

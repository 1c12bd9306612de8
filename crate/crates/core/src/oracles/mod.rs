//! Independent reference implementations used to cross-check the exact
//! recursions: a triangular moment ODE integrator, a spectral grid filter, a
//! bootstrap particle filter, and an Euler path simulator. All of them work
//! in `f64` and trade speed for being derivable without the closed forms
//! they validate.

pub mod grid;
pub mod ode;
pub mod particle;
pub mod path;

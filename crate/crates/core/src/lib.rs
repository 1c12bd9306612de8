//! Exact filtering, prediction, smoothing, and likelihood inference for a
//! Wright-Fisher diffusion observed at discrete times through a Bernoulli,
//! binomial, or negative binomial channel.
//!
//! Every conditional law that appears in the recursions is a finite mixture
//! of Beta distributions indexed on the integer lattice, so the filter, the
//! k-step predictors, the smoothing marginals, and the likelihood are all
//! computed in closed form: no discretization, no Monte Carlo. The
//! `oracles` module (on by default) carries independent brute-force
//! implementations used to validate the closed forms.
//!
//! The numerical core is generic over the scalar type through [`Real`];
//! the aliases below fix `f64`, which is what the CLI and the estimation
//! layer use.

pub mod error;
pub mod estimation;
pub mod filter;
pub mod hpoly;
pub mod kernel;
pub mod mixture;
pub mod observation;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod propagation;
pub mod scalar;
pub mod smoother;

pub use error::{Error, Result};
pub use scalar::Real;

/// Model parameters over `f64`.
pub type Params = kernel::ModelParams<f64>;
/// Beta mixture over `f64`.
pub type Mixture = mixture::BetaMixture<f64>;
/// Transition operator over `f64`.
pub type Transition = propagation::Transition<f64>;
/// Filter configuration over `f64`.
pub type FilterConfig = filter::FilterConfig<f64>;
/// Full filter output over `f64`.
pub type FilterRun = filter::FilterRun<f64>;
/// Backward smoothing function over `f64`.
pub type BackwardFunction = smoother::BackwardFunction<f64>;

//! Maximum likelihood over (delta, delta_prime) by derivative-free search.
//!
//! The likelihood surface is smooth but can be flat along one coordinate for
//! short series, so the search runs Nelder-Mead from several starts in a log
//! reparametrization u = ln(theta - 2 + eps) that keeps iterates inside the
//! admissible half-plane theta >= 2.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{log_likelihood, FilterConfig};
use crate::kernel::ModelParams;
use crate::mixture::BetaMixture;
use crate::observation::{Observation, ObservationModel};
use crate::propagation::Transition;

const DEFAULT_LOWER: f64 = 2.0;
const DEFAULT_UPPER: f64 = 200.0;
const BOUNDARY_EPS: f64 = 1e-4;
const REPARAM_EPS: f64 = 1e-6;
const DEFAULT_MAX_ITERS: usize = 500;
const LOGLIK_TOL: f64 = 1e-8;

/// Settings for the likelihood evaluations inside the search.
#[derive(Clone, Debug)]
pub struct EstimateConfig {
    pub max_depth: usize,
    pub prune_epsilon: f64,
    /// Starting points for the restarts; when empty, a default
    /// corner-and-center set of five is used.
    pub starts: Vec<(f64, f64)>,
    /// Stop when the simplex log-likelihood spread falls below this.
    pub value_tol: f64,
    /// ... and the simplex diameter in u-coordinates falls below this.
    pub simplex_tol: f64,
    /// Search box for both parameters; the lower bound may not go below 2.
    pub lower: f64,
    pub upper: f64,
    /// Iteration cap per restart.
    pub max_iters: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            max_depth: crate::filter::DEFAULT_MAX_DEPTH,
            prune_epsilon: crate::filter::DEFAULT_PRUNE_EPSILON,
            starts: Vec::new(),
            value_tol: LOGLIK_TOL,
            simplex_tol: 1e-7,
            lower: DEFAULT_LOWER,
            upper: DEFAULT_UPPER,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Outcome of the search. Non-convergence and active box constraints are
/// reported as flags, not failures.
#[derive(Clone, Debug)]
pub struct MleResult {
    pub delta: f64,
    pub delta_prime: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub at_boundary: bool,
    pub evaluations: usize,
}

fn to_u(theta: f64, lower: f64) -> f64 {
    (theta - lower + REPARAM_EPS).ln()
}

fn from_u(u: f64, lower: f64, upper: f64) -> f64 {
    (lower + u.exp() - REPARAM_EPS).clamp(lower, upper)
}

/// Exact log likelihood of the series at one parameter point; the stationary
/// law is the initial condition.
pub fn loglik_at(
    delta: f64,
    delta_prime: f64,
    obs: &[Observation],
    gaps: &[f64],
    om: &ObservationModel,
    config: &EstimateConfig,
) -> Result<f64> {
    let params = ModelParams::new(delta, delta_prime)?;
    let transition = Transition::new(params, config.max_depth);
    let init = BetaMixture::stationary(params);
    let fc = FilterConfig {
        max_depth: config.max_depth,
        prune_epsilon: config.prune_epsilon,
        keep_trace: false,
    };
    log_likelihood(obs, gaps, om, &transition, &init, &fc)
}

/// Log likelihood on a rectangular grid; rows follow `deltas`, columns follow
/// `delta_primes`. Points where the filter degenerates come back as -inf.
pub fn profile_loglik(
    deltas: &[f64],
    delta_primes: &[f64],
    obs: &[Observation],
    gaps: &[f64],
    om: &ObservationModel,
    config: &EstimateConfig,
) -> Vec<Vec<f64>> {
    deltas
        .par_iter()
        .map(|&d| {
            delta_primes
                .iter()
                .map(|&dp| loglik_at(d, dp, obs, gaps, om, config).unwrap_or(f64::NEG_INFINITY))
                .collect()
        })
        .collect()
}

struct NmOutcome {
    u: [f64; 2],
    value: f64,
    converged: bool,
    evaluations: usize,
}

/// Standard Nelder-Mead on negative log likelihood in u-coordinates.
fn nelder_mead<F: FnMut(&[f64; 2]) -> f64>(
    start: [f64; 2],
    value_tol: f64,
    simplex_tol: f64,
    max_iters: usize,
    mut f: F,
) -> NmOutcome {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    let mut evals = 0usize;
    let mut eval = |p: &[f64; 2], e: &mut usize| {
        *e += 1;
        f(p)
    };

    let step = 0.25;
    let mut simplex: Vec<([f64; 2], f64)> = vec![
        (start, 0.0),
        ([start[0] + step, start[1]], 0.0),
        ([start[0], start[1] + step], 0.0),
    ];
    for v in simplex.iter_mut() {
        v.1 = eval(&v.0, &mut evals);
    }

    let mut converged = false;
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[2].1 - simplex[0].1;
        let size = (0..2)
            .map(|k| (simplex[2].0[k] - simplex[0].0[k]).abs())
            .fold(0.0f64, f64::max);
        if spread.abs() < value_tol && size < simplex_tol {
            converged = true;
            break;
        }
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let worst = simplex[2];
        let reflect = [
            centroid[0] + ALPHA * (centroid[0] - worst.0[0]),
            centroid[1] + ALPHA * (centroid[1] - worst.0[1]),
        ];
        let fr = eval(&reflect, &mut evals);
        if fr < simplex[0].1 {
            let expand = [
                centroid[0] + GAMMA * (reflect[0] - centroid[0]),
                centroid[1] + GAMMA * (reflect[1] - centroid[1]),
            ];
            let fe = eval(&expand, &mut evals);
            simplex[2] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (reflect, fr);
        } else {
            let contract = [
                centroid[0] + RHO * (worst.0[0] - centroid[0]),
                centroid[1] + RHO * (worst.0[1] - centroid[1]),
            ];
            let fc = eval(&contract, &mut evals);
            if fc < worst.1 {
                simplex[2] = (contract, fc);
            } else {
                for i in 1..3 {
                    let shrunk = [
                        simplex[0].0[0] + SIGMA * (simplex[i].0[0] - simplex[0].0[0]),
                        simplex[0].0[1] + SIGMA * (simplex[i].0[1] - simplex[0].0[1]),
                    ];
                    let fs = eval(&shrunk, &mut evals);
                    simplex[i] = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    NmOutcome {
        u: simplex[0].0,
        value: simplex[0].1,
        converged,
        evaluations: evals,
    }
}

/// Maximize the exact log likelihood over the box [2, 200]^2, restarting
/// from the box corners and center (plus any extra starts) and keeping the
/// best run.
pub fn estimate_mle(
    obs: &[Observation],
    gaps: &[f64],
    om: &ObservationModel,
    config: &EstimateConfig,
) -> Result<MleResult> {
    if obs.is_empty() {
        return Err(Error::LengthMismatch("empty observation series".into()));
    }
    let (lower, upper) = (config.lower.max(DEFAULT_LOWER), config.upper);
    if !(lower < upper) {
        return Err(Error::LengthMismatch(format!(
            "invalid search box [{lower}, {upper}]"
        )));
    }
    let starts: Vec<(f64, f64)> = if config.starts.is_empty() {
        vec![
            (3.0, 3.0),
            (3.0, 30.0),
            (30.0, 3.0),
            (30.0, 30.0),
            (8.0, 8.0),
        ]
    } else {
        config.starts.clone()
    };

    let runs: Vec<NmOutcome> = starts
        .par_iter()
        .map(|&(d0, dp0)| {
            nelder_mead(
                [to_u(d0, lower), to_u(dp0, lower)],
                config.value_tol,
                config.simplex_tol,
                config.max_iters,
                |u| {
                    let d = from_u(u[0], lower, upper);
                    let dp = from_u(u[1], lower, upper);
                    match loglik_at(d, dp, obs, gaps, om, config) {
                        Ok(ll) if ll.is_finite() => -ll,
                        _ => f64::INFINITY,
                    }
                },
            )
        })
        .collect();

    let evaluations = runs.iter().map(|r| r.evaluations).sum();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::NumericalInstability(
            "likelihood not finite at any search point".into(),
        ));
    }
    let delta = from_u(best.u[0], lower, upper);
    let delta_prime = from_u(best.u[1], lower, upper);
    let at_boundary = [delta, delta_prime].iter().any(|&t| {
        t - lower < BOUNDARY_EPS || upper - t < BOUNDARY_EPS
    });
    Ok(MleResult {
        delta,
        delta_prime,
        log_likelihood: -best.value,
        converged: best.converged,
        at_boundary,
        evaluations,
    })
}

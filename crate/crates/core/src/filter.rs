//! The forward recursion: update with the new observation, then propagate to
//! the next observation time. The initial mixture is the law of the state at
//! the first observation time and is updated before any propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::BetaMixture;
use crate::observation::{predictive_prob, update, Observation, ObservationModel};
use crate::propagation::Transition;
use crate::scalar::Real;

pub const DEFAULT_MAX_DEPTH: usize = 64;
pub const DEFAULT_PRUNE_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct FilterConfig<T> {
    pub max_depth: usize,
    /// Components below this weight are dropped after each prediction step;
    /// set to zero for exactness tests.
    pub prune_epsilon: T,
    /// Keep per-step mixtures (needed by the smoother). Likelihood-only runs
    /// can switch this off and stream.
    pub keep_trace: bool,
}

impl<T: Real> Default for FilterConfig<T> {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            prune_epsilon: T::of(DEFAULT_PRUNE_EPSILON),
            keep_trace: true,
        }
    }
}

/// Which half of the update/predict cycle a state sits in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterPhase {
    Updated,
    Predicted,
}

#[derive(Clone, Debug)]
pub struct FilterState<T> {
    pub current: BetaMixture<T>,
    pub phase: FilterPhase,
    pub step_index: usize,
    pub cumulative_loglik: T,
}

/// Per-observation record of the forward pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord<T: Real + Serialize> {
    /// nu_{k|k-1:1}, the mixture the observation was scored against.
    pub predicted: BetaMixture<T>,
    /// nu_{k|k:1}, after the conjugate update.
    pub updated: BetaMixture<T>,
    /// p(y_k | y_{k-1}, ..., y_1)
    pub predictive_prob: T,
    pub component_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterTrace<T: Real + Serialize> {
    pub steps: Vec<StepRecord<T>>,
    pub log_likelihood: T,
}

/// The final filter state of a run plus its trace.
pub struct FilterRun<T: Real + Serialize> {
    pub trace: FilterTrace<T>,
    pub state: FilterState<T>,
}

fn check_inputs<T: Real>(obs: &[Observation], gaps: &[T]) -> Result<()> {
    if obs.len() != gaps.len() {
        return Err(Error::LengthMismatch(format!(
            "{} observations vs {} gaps",
            obs.len(),
            gaps.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::LengthMismatch("empty observation record".into()));
    }
    Ok(())
}

/// Run the forward filter.
///
/// `gaps[k]` is the time elapsed since the previous observation; `gaps[0]` is
/// the time between the instant where `init` is the state law and the first
/// observation (pass 0 to use `init` as the first predicted mixture, which is
/// a no-op for the stationary default).
pub fn run_filter<T: Real + Serialize>(
    obs: &[Observation],
    gaps: &[T],
    om: &ObservationModel,
    transition: &Transition<T>,
    init: &BetaMixture<T>,
    config: &FilterConfig<T>,
) -> Result<FilterRun<T>> {
    check_inputs(obs, gaps)?;
    let mut steps = Vec::with_capacity(if config.keep_trace { obs.len() } else { 0 });
    let mut loglik = T::zero();
    let mut current = init.clone();
    for (k, (&y, &gap)) in obs.iter().zip(gaps).enumerate() {
        let predicted = if gap == T::zero() {
            current
        } else {
            transition.propagate(&current, gap, config.prune_epsilon)?
        };
        let p = predictive_prob(&predicted, y, om)?;
        if !(p > T::zero()) {
            return Err(Error::ImpossibleObservation);
        }
        loglik += p.ln();
        let updated = update(&predicted, y, om)?;
        if config.keep_trace {
            steps.push(StepRecord {
                predicted,
                component_count: updated.component_count(),
                updated: updated.clone(),
                predictive_prob: p,
            });
        }
        let _ = k;
        current = updated;
    }
    Ok(FilterRun {
        trace: FilterTrace {
            steps,
            log_likelihood: loglik,
        },
        state: FilterState {
            current,
            phase: FilterPhase::Updated,
            step_index: obs.len(),
            cumulative_loglik: loglik,
        },
    })
}

/// Exact log-likelihood of the record: the summed log predictive
/// probabilities. Streams without retaining a trace.
pub fn log_likelihood<T: Real + Serialize>(
    obs: &[Observation],
    gaps: &[T],
    om: &ObservationModel,
    transition: &Transition<T>,
    init: &BetaMixture<T>,
    config: &FilterConfig<T>,
) -> Result<T> {
    let cfg = FilterConfig {
        keep_trace: false,
        ..*config
    };
    Ok(run_filter(obs, gaps, om, transition, init, &cfg)?
        .trace
        .log_likelihood)
}

/// h-step-ahead prediction: h-fold application of P_delta to an updated
/// state. By the semigroup property this is a single propagation over
/// h * delta, which is how it is evaluated.
pub fn predict_h<T: Real>(
    state: &FilterState<T>,
    h: usize,
    delta: T,
    transition: &Transition<T>,
    prune_epsilon: T,
) -> Result<BetaMixture<T>> {
    assert!(h >= 1, "prediction horizon must be positive");
    debug_assert_eq!(state.phase, FilterPhase::Updated);
    transition.propagate(&state.current, T::of_usize(h) * delta, prune_epsilon)
}

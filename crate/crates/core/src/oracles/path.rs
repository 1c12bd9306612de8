//! Path simulation of the diffusion and synthetic observation series.
//!
//! The state follows dx = (-delta x + delta' (1 - x)) dt + 2 sqrt(x(1-x)) dW
//! and is integrated with a full-truncation Euler scheme: the coefficients
//! see the state clipped to [0, 1], so excursions outside the interval decay
//! back without biasing the diffusion term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::Result;
use crate::kernel::ModelParams;
use crate::observation::{sample_observation, Observation, ObservationModel};

/// Ceiling on the Euler substep length.
const MAX_SUBSTEP: f64 = 1e-3;
/// Minimum number of substeps per observation gap.
const MIN_SUBSTEPS_PER_GAP: usize = 200;

#[derive(Clone, Debug)]
pub struct SimulationSpec {
    pub delta: f64,
    pub delta_prime: f64,
    /// Number of observations.
    pub n: usize,
    /// Constant spacing between observations.
    pub dt: f64,
    pub channel: ObservationModel,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub observations: Vec<Observation>,
}

impl Dataset {
    /// Gap vector in the convention the filter expects: zero before the
    /// first observation (the initial law applies at its time), then the
    /// elapsed time since the previous one.
    pub fn gaps(&self) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.times.len());
        for (k, &t) in self.times.iter().enumerate() {
            g.push(if k == 0 { 0.0 } else { t - self.times[k - 1] });
        }
        g
    }
}

/// One full-truncation Euler step of length `h`.
fn euler_step<R: Rng + ?Sized>(x: f64, params: &ModelParams<f64>, h: f64, rng: &mut R) -> f64 {
    let xc = x.clamp(0.0, 1.0);
    let drift = -params.delta() * xc + params.delta_prime() * (1.0 - xc);
    let diff = 2.0 * (xc * (1.0 - xc)).sqrt();
    let z: f64 = StandardNormal.sample(rng);
    x + drift * h + diff * h.sqrt() * z
}

/// Advance the state across a gap of length `t`.
pub fn propagate_state<R: Rng + ?Sized>(
    mut x: f64,
    t: f64,
    params: &ModelParams<f64>,
    rng: &mut R,
) -> f64 {
    if t <= 0.0 {
        return x;
    }
    let target = (t / MIN_SUBSTEPS_PER_GAP as f64).min(MAX_SUBSTEP);
    let steps = (t / target).ceil() as usize;
    let h = t / steps as f64;
    for _ in 0..steps {
        x = euler_step(x, params, h, rng);
    }
    x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Draw from the stationary law Beta(delta'/2, delta/2).
pub fn sample_stationary<R: Rng + ?Sized>(params: &ModelParams<f64>, rng: &mut R) -> f64 {
    let beta = Beta::new(params.delta_prime() / 2.0, params.delta() / 2.0)
        .expect("valid shape parameters");
    beta.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Simulate a regularly spaced dataset started from the stationary law.
pub fn simulate_dataset(spec: &SimulationSpec) -> Result<Dataset> {
    let params = ModelParams::new(spec.delta, spec.delta_prime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = sample_stationary(&params, &mut rng);
    let mut times = Vec::with_capacity(spec.n);
    let mut states = Vec::with_capacity(spec.n);
    let mut observations = Vec::with_capacity(spec.n);
    for k in 0..spec.n {
        if k > 0 {
            x = propagate_state(x, spec.dt, &params, &mut rng);
        }
        times.push(k as f64 * spec.dt);
        states.push(x);
        observations.push(sample_observation(x, &spec.channel, &mut rng));
    }
    Ok(Dataset {
        times,
        states,
        observations,
    })
}

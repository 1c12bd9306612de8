//! Bootstrap particle filter.
//!
//! Propagates an ensemble with the Euler path scheme, weights by the
//! observation density, and resamples multinomially every step. Gives a
//! Monte Carlo estimate of the log likelihood and the filter means that is
//! free of both the mixture algebra and the spectral expansion.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::ModelParams;
use crate::observation::{Observation, ObservationModel};
use crate::oracles::path::{propagate_state, sample_stationary};

const PAR_CHUNK: usize = 2048;

#[derive(Clone, Debug)]
pub struct ParticleStep {
    pub mean: f64,
    /// Effective sample size after weighting, before resampling.
    pub ess: f64,
}

#[derive(Clone, Debug)]
pub struct ParticleRun {
    pub steps: Vec<ParticleStep>,
    pub log_likelihood: f64,
}

/// Run the filter on a regularly spaced series started from the stationary
/// law. Deterministic in `seed` for a fixed particle count.
pub fn particle_filter(
    obs: &[Observation],
    gap: f64,
    om: &ObservationModel,
    params: &ModelParams<f64>,
    particles: usize,
    seed: u64,
) -> Result<ParticleRun> {
    assert!(particles >= 2);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        (0..particles)
            .map(|_| sample_stationary(params, &mut rng))
            .collect()
    };
    let mut steps = Vec::with_capacity(obs.len());
    let mut loglik = 0.0f64;
    let mut weights = vec![0.0f64; particles];

    for (k, &y) in obs.iter().enumerate() {
        om.validate(y)?;
        if k > 0 && gap > 0.0 {
            // one RNG per chunk so the parallel pass stays reproducible
            let chunk_seeds: Vec<u64> = (0..xs.len().div_ceil(PAR_CHUNK))
                .map(|_| master.gen())
                .collect();
            xs.par_chunks_mut(PAR_CHUNK)
                .zip(chunk_seeds)
                .for_each(|(chunk, s)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    for x in chunk {
                        *x = propagate_state(*x, gap, params, &mut rng);
                    }
                });
        }
        weights
            .par_iter_mut()
            .zip(xs.par_iter())
            .for_each(|(w, &x)| *w = om.density(x, y));
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateWeights { step: k });
        }
        loglik += (total / particles as f64).ln();
        let mean = xs
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| x * w)
            .sum::<f64>()
            / total;
        let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
        steps.push(ParticleStep {
            mean,
            ess: total * total / sum_sq,
        });

        let dist = WeightedIndex::new(&weights)
            .map_err(|_| Error::DegenerateWeights { step: k })?;
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        xs = (0..particles).map(|_| xs[dist.sample(&mut rng)]).collect();
    }
    Ok(ParticleRun {
        steps,
        log_likelihood: loglik,
    })
}

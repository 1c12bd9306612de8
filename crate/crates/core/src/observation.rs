//! Emission channels and the conjugate Bayes update.
//!
//! All three channels (Bernoulli, binomial, negative binomial) map a single
//! Beta component to a single shifted Beta component, so the update of a
//! mixture is an index shift plus a reweighting by the component-wise
//! predictive probabilities. Marginals are evaluated in log domain through
//! Beta-function ratios, which stays stable for large counts and deep
//! lattice indices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{log_beta_ratio, ModelParams};
use crate::mixture::{BetaMixture, LatticeIndex};
use crate::scalar::{ln_binomial, KahanSum, Real};

/// Observation channel; one channel is fixed for a whole record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "channel", rename_all = "lowercase")]
pub enum ObservationModel {
    Bernoulli,
    Binomial {
        #[serde(rename = "N")]
        n: u64,
    },
    NegBinomial {
        m: u64,
    },
}

/// One observed count.
pub type Observation = u64;

impl ObservationModel {
    pub fn validate(&self, y: Observation) -> Result<()> {
        let ok = match self {
            ObservationModel::Bernoulli => y <= 1,
            ObservationModel::Binomial { n } => y <= *n,
            ObservationModel::NegBinomial { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidObservation {
                value: y,
                channel: format!("{self:?}"),
            })
        }
    }

    /// Inclusive upper end of the support, when finite.
    pub fn finite_support(&self) -> Option<u64> {
        match self {
            ObservationModel::Bernoulli => Some(1),
            ObservationModel::Binomial { n } => Some(*n),
            ObservationModel::NegBinomial { .. } => None,
        }
    }

    /// Index shift applied to a Beta component by the update for `y`.
    pub fn shift(&self, y: Observation) -> (usize, usize) {
        match self {
            ObservationModel::Bernoulli => (y as usize, 1 - y as usize),
            ObservationModel::Binomial { n } => (y as usize, (n - y) as usize),
            ObservationModel::NegBinomial { m } => (*m as usize, y as usize),
        }
    }

    /// ln of the combinatorial factor in the emission density.
    fn ln_comb<T: Real>(&self, y: Observation) -> T {
        match self {
            ObservationModel::Bernoulli => T::zero(),
            ObservationModel::Binomial { n } => ln_binomial(*n as usize, y as usize),
            ObservationModel::NegBinomial { m } => {
                ln_binomial((*m + y - 1) as usize, y as usize)
            }
        }
    }

    /// Emission density f_x(y).
    pub fn density<T: Real>(&self, x: T, y: Observation) -> T {
        let (a, b) = self.shift(y);
        (self.ln_comb::<T>(y) + T::of_usize(a) * x.ln() + T::of_usize(b) * (T::one() - x).ln())
            .exp()
    }
}

/// Predictive probability of `y` under the single component `idx`.
pub fn component_marginal<T: Real>(
    idx: LatticeIndex,
    y: Observation,
    om: &ObservationModel,
    params: &ModelParams<T>,
) -> Result<T> {
    om.validate(y)?;
    let (di, dj) = om.shift(y);
    let ln = om.ln_comb::<T>(y) + log_beta_ratio(idx, idx.shifted(di, dj), params);
    Ok(ln.exp())
}

/// Predictive probability of `y` under a mixture: the weight-mixed component
/// marginals.
pub fn predictive_prob<T: Real>(
    m: &BetaMixture<T>,
    y: Observation,
    om: &ObservationModel,
) -> Result<T> {
    om.validate(y)?;
    let mut acc = KahanSum::default();
    for (idx, w) in m.iter() {
        acc.add(w * component_marginal(idx, y, om, m.params())?);
    }
    Ok(acc.value())
}

/// The conjugate update operator: shift every component by the channel rule
/// and reweight by its predictive probability of `y`.
pub fn update<T: Real>(
    m: &BetaMixture<T>,
    y: Observation,
    om: &ObservationModel,
) -> Result<BetaMixture<T>> {
    om.validate(y)?;
    let (di, dj) = om.shift(y);
    let mut out = BetaMixture::empty(*m.params());
    for (idx, w) in m.iter() {
        let p = component_marginal(idx, y, om, m.params())?;
        out.accumulate(idx.shifted(di, dj), w * p);
    }
    if !(out.total_weight() > T::zero()) {
        return Err(Error::ImpossibleObservation);
    }
    out.normalize()
}

/// Draw one observation from f_x(.).
pub fn sample_observation<R: Rng + ?Sized>(
    x: f64,
    om: &ObservationModel,
    rng: &mut R,
) -> Observation {
    use rand_distr::Distribution;
    debug_assert!(x > 0.0 && x < 1.0);
    match om {
        ObservationModel::Bernoulli => u64::from(rng.gen_bool(x)),
        ObservationModel::Binomial { n } => {
            rand_distr::Binomial::new(*n, x).unwrap().sample(rng)
        }
        ObservationModel::NegBinomial { m } => {
            // failures before the m-th success: sum of m geometric draws
            let geo = rand_distr::Geometric::new(x).unwrap();
            (0..*m).map(|_| geo.sample(rng)).sum()
        }
    }
}

//! Backward functions and marginal smoothing.
//!
//! The backward function p_{l,n}(y_{l+1},...,y_n; x) is a finite combination
//! of the h_{i,j} monomials, built by alternating an emission-monomial shift
//! with a moment expansion (one application of P_delta). The smoothed
//! marginal at l is the filter mixture at l tilted by the backward function;
//! its unnormalized mass recovers the product of the predictive
//! probabilities of the suffix observations.
//!
//! Backward coefficients decay like that product, so the polynomial is kept
//! rescaled by its running maximum coefficient with the log-scale tracked
//! separately.

use crate::error::{Error, Result};
use crate::hpoly::HPolynomial;
use crate::kernel::log_beta_ratio;
use crate::mixture::BetaMixture;
use crate::observation::{Observation, ObservationModel};
use crate::propagation::Transition;
use crate::scalar::{KahanSum, Real};

/// Relative cutoff for backward polynomial terms.
const BACKWARD_TERM_CUTOFF: f64 = 1e-14;

/// An unnormalized backward function: `exp(log_scale) * poly`.
#[derive(Clone, Debug)]
pub struct BackwardFunction<T> {
    pub poly: HPolynomial<T>,
    pub log_scale: T,
}

impl<T: Real> BackwardFunction<T> {
    pub fn eval(&self, x: T) -> T {
        self.log_scale.exp() * self.poly.eval(x)
    }

    fn rescale(&mut self) {
        let max = self.poly.max_abs_coeff();
        if max > T::zero() && max.is_finite() {
            self.poly.scale(max.recip());
            self.log_scale += max.ln();
            self.poly.prune_relative(T::of(BACKWARD_TERM_CUTOFF));
        }
    }
}

/// The empty-suffix convention p_{n,n} = 1.
pub fn backward_init<T: Real>() -> BackwardFunction<T> {
    BackwardFunction {
        poly: HPolynomial::one(),
        log_scale: T::zero(),
    }
}

/// One backward step: bf <- P_delta [ f_.(y) * bf ].
///
/// The emission density is itself a scaled monomial, so the multiplication
/// is an index shift; the transition then expands every h_{n,p} through its
/// moment expansion.
pub fn backward_step<T: Real>(
    bf: &BackwardFunction<T>,
    y: Observation,
    om: &ObservationModel,
    delta: T,
    transition: &Transition<T>,
) -> Result<BackwardFunction<T>> {
    om.validate(y)?;
    let (a, b) = om.shift(y);
    let ln_comb = match om {
        ObservationModel::Bernoulli => T::zero(),
        ObservationModel::Binomial { n } => {
            crate::scalar::ln_binomial(*n as usize, y as usize)
        }
        ObservationModel::NegBinomial { m } => {
            crate::scalar::ln_binomial((*m + y - 1) as usize, y as usize)
        }
    };
    let shifted = bf.poly.shifted(a, b);
    let top = shifted.degree();
    let tri = transition.bt_triangle_for(top, delta)?;
    let mut out = HPolynomial::zero();
    for (idx, coeff) in shifted.iter() {
        let expansion = transition.moment_expansion_with(idx, delta, &tri, top)?;
        for (target, c) in expansion.iter() {
            out.add_term(target, coeff * c);
        }
    }
    let mut next = BackwardFunction {
        poly: out,
        log_scale: bf.log_scale + ln_comb,
    };
    next.rescale();
    if next.poly.is_empty() {
        return Err(Error::NumericalInstability(
            "backward function vanished".into(),
        ));
    }
    Ok(next)
}

/// All backward functions p_{l,n} for l = n down to `first`, indexed so that
/// `out[l]` pairs with the filter state after observation l+1 (0-based step
/// l). `obs[l+1..]` is the suffix encoded in `out[l]`.
pub fn backward_sweep<T: Real>(
    obs: &[Observation],
    gaps: &[T],
    om: &ObservationModel,
    transition: &Transition<T>,
) -> Result<Vec<BackwardFunction<T>>> {
    if obs.len() != gaps.len() {
        return Err(Error::LengthMismatch(format!(
            "{} observations vs {} gaps",
            obs.len(),
            gaps.len()
        )));
    }
    let n = obs.len();
    let mut out = Vec::with_capacity(n);
    let mut bf = backward_init();
    out.push(bf.clone()); // l = n - 1 in 0-based step terms: empty suffix
    for l in (1..n).rev() {
        // suffix gains observation y_{l+1} (0-based obs[l]) at lag gaps[l]
        bf = backward_step(&bf, obs[l], om, gaps[l], transition)?;
        out.push(bf.clone());
    }
    out.reverse();
    Ok(out)
}

/// Combine a filter mixture with a backward function into the smoothed
/// marginal. Returns the mixture and the log of the unnormalized mass, which
/// equals the summed log predictive probabilities of the suffix.
pub fn smooth_marginal<T: Real>(
    filtered: &BetaMixture<T>,
    backward: &BackwardFunction<T>,
) -> Result<(BetaMixture<T>, T)> {
    let params = *filtered.params();
    let mut out = BetaMixture::empty(params);
    let mut mass = KahanSum::default();
    for (idx, w) in filtered.iter() {
        for (term, coeff) in backward.poly.iter() {
            if coeff == T::zero() {
                continue;
            }
            let target = idx.shifted(term.i, term.j);
            // nu_{i,j} h_{a,b} = nu_{i+a,j+b} B(target)/B(idx)
            let weight = w * coeff * log_beta_ratio(idx, target, &params).exp();
            if weight < T::zero() {
                return Err(Error::NumericalInstability(format!(
                    "negative smoothing weight at ({}, {})",
                    target.i, target.j
                )));
            }
            mass.add(weight);
            out.accumulate(target, weight);
        }
    }
    let total = mass.value();
    if !(total > T::zero()) {
        return Err(Error::DegenerateMixture);
    }
    Ok((out.normalize()?, total.ln() + backward.log_scale))
}

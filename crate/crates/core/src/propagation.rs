//! The prediction operator nu P_t on Beta components and mixtures, and the
//! moment expansions P_t h_{n,p} that also power the smoother.
//!
//! A component at (n, p) propagates onto the index rectangle
//! {(n-k, p-l) : 0 <= k <= n, 0 <= l <= p}. The weight of the (k, l) shift is
//! a binomial-coefficient ratio times a product of eigen-rates times an
//! exponential divided difference over the rate-ladder prefix; the diagonal
//! weight is exp(-a_{n+p} t). Binomial ratios and rate products are handled
//! as cached log-sums and only exponentiated under an overflow guard.

use crate::error::{Error, Result};
use crate::hpoly::HPolynomial;
use crate::kernel::{drift_coeff, exp_dd_triangle, BtTriangle, ModelParams, RateLadder};
use crate::mixture::{BetaMixture, LatticeIndex};
use crate::scalar::{ln_binomial, KahanSum, Real};

/// Tolerance on the analytic sum-to-one of prediction weights; a larger
/// deviation means the divided differences went unstable.
const WEIGHT_SUM_TOL: f64 = 1e-8;
/// Guard on exponentiating cached log rate products.
const MAX_LN_PRODUCT: f64 = 700.0;

/// Transition context: model parameters plus the cached rate ladder.
/// Immutable after construction, safe to share across threads.
#[derive(Clone, Debug)]
pub struct Transition<T> {
    params: ModelParams<T>,
    ladder: RateLadder<T>,
    // prefix sums of ln c_m(delta') and ln c_m(delta)
    ln_drift_prime_prefix: Vec<T>,
    ln_drift_prefix: Vec<T>,
}

impl<T: Real> Transition<T> {
    pub fn new(params: ModelParams<T>, max_depth: usize) -> Self {
        let ladder = RateLadder::new(&params, max_depth);
        let prefix = |rate: T| {
            let mut acc = T::zero();
            let mut v = Vec::with_capacity(max_depth + 1);
            v.push(acc);
            for m in 1..=max_depth {
                acc += drift_coeff(m, rate).ln();
                v.push(acc);
            }
            v
        };
        Self {
            ladder,
            ln_drift_prime_prefix: prefix(params.delta_prime()),
            ln_drift_prefix: prefix(params.delta()),
            params,
        }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn max_depth(&self) -> usize {
        self.ladder.max_depth()
    }

    pub fn ladder(&self) -> &RateLadder<T> {
        &self.ladder
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth > self.max_depth() {
            return Err(Error::DepthExceeded {
                depth,
                max: self.max_depth(),
            });
        }
        Ok(())
    }

    /// One B_t triangle covering every ladder range up to `top`: the value
    /// over (a_d, ..., a_{d-s}) sits at `(top - d, top - d + s)`.
    fn bt_triangle(&self, top: usize, t: T) -> Result<BtTriangle<T>> {
        let nodes = self.ladder.descending(top, top + 1);
        exp_dd_triangle(&nodes, t)
    }

    /// ln of c_n(delta') c_{n-1}(delta') ... c_{n-k+1}(delta').
    fn ln_drift_prime_product(&self, n: usize, k: usize) -> T {
        self.ln_drift_prime_prefix[n] - self.ln_drift_prime_prefix[n - k]
    }

    fn ln_drift_product(&self, p: usize, l: usize) -> T {
        self.ln_drift_prefix[p] - self.ln_drift_prefix[p - l]
    }

    /// Combine a cached log product with a log-domain B_t value. The two
    /// halves routinely sit hundreds of decades apart, so they are only
    /// exponentiated after cancelling against each other.
    fn combine(&self, ln_product: T, ln_bt: T) -> Result<T> {
        if ln_bt == T::neg_infinity() {
            return Ok(T::zero());
        }
        let ln = ln_product + ln_bt;
        if ln > T::of(MAX_LN_PRODUCT) {
            return Err(Error::NumericalInstability(format!(
                "prediction coefficient overflows: ln = {ln}"
            )));
        }
        Ok(ln.exp())
    }

    /// The moment expansion m_{n,p}(t, .) = P_t h_{n,p} as a combination of
    /// h_{n-k,p-l} with nonnegative coefficients.
    pub fn moment_expansion(&self, idx: LatticeIndex, t: T) -> Result<HPolynomial<T>> {
        let depth = idx.depth();
        self.check_depth(depth)?;
        let tri = self.bt_triangle(depth, t)?;
        self.moment_expansion_with(idx, t, &tri, depth)
    }

    /// Moment expansion against a shared B_t triangle built at `top`; use
    /// [`Transition::bt_triangle_for`] to amortize the triangle across many
    /// expansions at the same time step.
    pub fn moment_expansion_with(
        &self,
        idx: LatticeIndex,
        t: T,
        tri: &BtTriangle<T>,
        top: usize,
    ) -> Result<HPolynomial<T>> {
        let (n, p) = (idx.i, idx.j);
        let depth = n + p;
        let off = top - depth;
        let mut out = HPolynomial::zero();
        for k in 0..=n {
            for l in 0..=p {
                let coeff = if k == 0 && l == 0 {
                    (-self.ladder.rate(depth) * t).exp()
                } else {
                    let ln = ln_binomial::<T>(k + l, k)
                        + self.ln_drift_prime_product(n, k)
                        + self.ln_drift_product(p, l);
                    self.combine(ln, tri.ln_get(off, off + k + l))?
                };
                out.add_term(LatticeIndex::new(n - k, p - l), coeff);
            }
        }
        Ok(out)
    }

    /// B_t triangle over the full rate ladder down from `top`, shareable
    /// across every component and expansion at the same time step.
    pub fn bt_triangle_for(&self, top: usize, t: T) -> Result<BtTriangle<T>> {
        self.check_depth(top)?;
        self.bt_triangle(top, t)
    }

    /// Table of r[depth][s] = (a_depth ... a_{depth-s+1}) * B_t over that
    /// ladder range, shared by every component of a mixture. Each entry is at
    /// most a slowly growing multiple of one (the weights it produces are
    /// probabilities divided by a hypergeometric factor), so plain arithmetic
    /// is safe after the one exponentiation here.
    fn rate_bt_table(&self, tri: &BtTriangle<T>, top: usize, t: T) -> Result<Vec<Vec<T>>> {
        let mut table = Vec::with_capacity(top + 1);
        for depth in 0..=top {
            let off = top - depth;
            let mut row = Vec::with_capacity(depth + 1);
            row.push((-self.ladder.rate(depth) * t).exp());
            for s in 1..=depth {
                let ln = self.ladder.ln_rate_product(depth, s) + tri.ln_get(off, off + s);
                row.push(self.combine(T::zero(), ln)?);
            }
            table.push(row);
        }
        Ok(table)
    }

    /// nu_{n,p} P_t as a Beta mixture over the index rectangle below (n, p).
    pub fn propagate_component(&self, idx: LatticeIndex, t: T) -> Result<BetaMixture<T>> {
        let depth = idx.depth();
        self.check_depth(depth)?;
        if t == T::zero() || depth == 0 {
            return BetaMixture::from_components(self.params, [(idx, T::one())]);
        }
        let tri = self.bt_triangle(depth, t)?;
        let table = self.rate_bt_table(&tri, depth, t)?;
        let weights = self.component_weights(idx, &table[depth])?;
        BetaMixture::from_components(self.params, weights)
    }

    /// Prediction weights of one component. `rates[s]` must hold the shared
    /// rate-product-times-B_t factor for the component's depth; the
    /// hypergeometric factor C(n,k)C(p,l)/C(n+p,k+l) is built by recurrence,
    /// entirely in positive arithmetic.
    fn component_weights(
        &self,
        idx: LatticeIndex,
        rates: &[T],
    ) -> Result<Vec<(LatticeIndex, T)>> {
        let (n, p) = (idx.i, idx.j);
        let depth = n + p;
        if depth == 0 {
            return Ok(vec![(idx, T::one())]);
        }
        let mut weights: Vec<(LatticeIndex, T)> = Vec::with_capacity((n + 1) * (p + 1));
        let mut sum = KahanSum::default();
        let mut hyper_k = T::one(); // C(n,k) C(p,0) / C(n+p,k) at the current k
        for k in 0..=n {
            let mut hyper = hyper_k;
            for l in 0..=p {
                let alpha = hyper * rates[k + l];
                sum.add(alpha);
                weights.push((LatticeIndex::new(n - k, p - l), alpha));
                if l < p {
                    hyper = hyper * T::of_usize(p - l) * T::of_usize(k + l + 1)
                        / (T::of_usize(l + 1) * T::of_usize(depth - k - l));
                }
            }
            if k < n {
                hyper_k = hyper_k * T::of_usize(n - k) / T::of_usize(depth - k);
            }
        }

        let total = sum.value();
        let deviation = (total - T::one()).to_f64().unwrap_or(f64::NAN);
        if !(deviation.abs() <= WEIGHT_SUM_TOL) {
            return Err(Error::WeightSumDeviation {
                index: idx,
                sum: deviation,
            });
        }
        // Fold the rounding residual into the ergodic (0,0) component; it is
        // the dominant weight for every t where the residual can matter.
        let residual = T::one() - total;
        if let Some(origin) = weights
            .iter_mut()
            .find(|(w_idx, _)| *w_idx == LatticeIndex::ORIGIN)
        {
            if origin.1 + residual >= T::zero() {
                origin.1 += residual;
            }
        }
        Ok(weights)
    }

    /// Propagate a whole mixture: the weight-linear combination of component
    /// propagations, accumulated sparsely, normalized, then pruned.
    pub fn propagate(&self, m: &BetaMixture<T>, t: T, prune_epsilon: T) -> Result<BetaMixture<T>> {
        let top = m.depth();
        self.check_depth(top)?;
        let tri = self.bt_triangle(top, t)?;
        let table = self.rate_bt_table(&tri, top, t)?;
        let mut out = BetaMixture::empty(*m.params());
        for (idx, w) in m.iter() {
            if t == T::zero() || idx.depth() == 0 {
                out.accumulate(idx, w);
                continue;
            }
            for (target, alpha) in self.component_weights(idx, &table[idx.depth()])? {
                out.accumulate(target, w * alpha);
            }
        }
        let (pruned, _) = out.normalize()?.prune(prune_epsilon)?;
        Ok(pruned)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{eigen_rate, log_beta_ratio};

    fn transition(d: f64, dp: f64) -> Transition<f64> {
        Transition::new(ModelParams::new(d, dp).unwrap(), 64)
    }

    #[test]
    fn moment_expansion_origin_is_one() {
        let tr = transition(2.0, 2.0);
        for &t in &[0.0, 0.3, 5.0] {
            let m = tr.moment_expansion(LatticeIndex::ORIGIN, t).unwrap();
            assert_eq!(m.term_count(), 1);
            assert_eq!(m.coeff(LatticeIndex::ORIGIN), 1.0);
        }
    }

    #[test]
    fn moment_expansion_one_zero_closed_form() {
        // m_{1,0}(t,.) = e^{-a_1 t} h_{1,0} + c_1(delta')(1 - e^{-a_1 t})/a_1 h_{0,0}
        let (d, dp) = (2.5, 3.0);
        let tr = transition(d, dp);
        let t = 0.4;
        let a1 = d + dp;
        let m = tr.moment_expansion(LatticeIndex::new(1, 0), t).unwrap();
        let e = (-a1 * t as f64).exp();
        assert!((m.coeff(LatticeIndex::new(1, 0)) - e).abs() < 1e-15);
        let expect = dp * (1.0 - e) / a1; // c_1(delta') = delta'
        assert!((m.coeff(LatticeIndex::ORIGIN) - expect).abs() < 1e-15);
    }

    #[test]
    fn moment_expansion_nonnegative_coeffs() {
        let tr = transition(2.0, 7.5);
        for &t in &[0.01, 0.1, 1.0, 10.0] {
            for n in 0..=8usize {
                for p in 0..=8usize {
                    let m = tr.moment_expansion(LatticeIndex::new(n, p), t).unwrap();
                    for (_, c) in m.iter() {
                        assert!(c >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn propagate_component_identity_cases() {
        let tr = transition(2.0, 2.0);
        // (0,0) is a fixed point for any t
        let m = tr.propagate_component(LatticeIndex::ORIGIN, 3.7).unwrap();
        assert_eq!(m.component_count(), 1);
        assert_eq!(m.weight(LatticeIndex::ORIGIN), 1.0);
        // t = 0 is the identity, exactly
        let idx = LatticeIndex::new(4, 2);
        let m = tr.propagate_component(idx, 0.0).unwrap();
        assert_eq!(m.component_count(), 1);
        assert_eq!(m.weight(idx), 1.0);
    }

    #[test]
    fn propagate_component_one_zero() {
        // nu_{1,0} P_t = e^{-a_1 t} nu_{1,0} + (1 - e^{-a_1 t}) nu_{0,0}
        let (d, dp) = (2.0, 5.0);
        let tr = transition(d, dp);
        let t = 0.23;
        let e = (-(d + dp) * t as f64).exp();
        let m = tr.propagate_component(LatticeIndex::new(1, 0), t).unwrap();
        assert!((m.weight(LatticeIndex::new(1, 0)) - e).abs() < 1e-15);
        assert!((m.weight(LatticeIndex::ORIGIN) - (1.0 - e)).abs() < 1e-15);
    }

    #[test]
    fn propagate_component_two_zero_worked_example() {
        let tr = transition(2.0, 2.0);
        let p = tr.params();
        let (a1, a2) = (eigen_rate(1, p), eigen_rate(2, p));
        assert_eq!((a1, a2), (4.0, 12.0));
        let t = 0.1;
        let m = tr.propagate_component(LatticeIndex::new(2, 0), t).unwrap();
        let a20 = (-1.2f64).exp();
        let a10 = a2 / (a2 - a1) * ((-0.4f64).exp() - (-1.2f64).exp());
        let a00 = a1 / (a2 - a1) * (-1.2f64).exp() - a2 / (a2 - a1) * (-0.4f64).exp() + 1.0;
        assert!((m.weight(LatticeIndex::new(2, 0)) - a20).abs() < 1e-12);
        assert!((m.weight(LatticeIndex::new(1, 0)) - a10).abs() < 1e-12);
        assert!((m.weight(LatticeIndex::ORIGIN) - a00).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one_across_depths() {
        for &(d, dp) in &[(2.0, 2.0), (2.5, 10.0)] {
            let tr = transition(d, dp);
            for &t in &[0.01, 0.1, 1.0, 10.0] {
                for depth in 0..=20usize {
                    for n in 0..=depth {
                        let idx = LatticeIndex::new(n, depth - n);
                        let m = tr.propagate_component(idx, t).unwrap();
                        let total: f64 = m.iter().map(|(_, w)| w).sum();
                        assert!((total - 1.0).abs() < 1e-10, "{idx:?} t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn mixture_weight_conversion_consistency() {
        // alpha_{i,j} = B_{i,j} * B(i+d'/2, j+d/2) / B(n+d'/2, p+d/2)
        let tr = transition(3.0, 2.25);
        let idx = LatticeIndex::new(3, 2);
        let t = 0.35;
        let poly = tr.moment_expansion(idx, t).unwrap();
        let mix = tr.propagate_component(idx, t).unwrap();
        for (target, b) in poly.iter() {
            let alpha = b * log_beta_ratio(idx, target, tr.params()).exp();
            assert!(
                (mix.weight(target) - alpha).abs() <= 1e-12,
                "{target:?}: {alpha} vs {}",
                mix.weight(target)
            );
        }
    }

    #[test]
    fn propagate_mixture_linearity_and_mean_ode() {
        // first moment obeys m' = -a_1 m + c_1(delta'), so
        // mean(t) = e^{-a_1 t} mean(0) + (1 - e^{-a_1 t}) delta'/(delta+delta')
        let tr = transition(2.0, 3.5);
        let p = *tr.params();
        let mix = BetaMixture::from_components(
            p,
            [
                (LatticeIndex::new(0, 0), 0.25),
                (LatticeIndex::new(2, 1), 0.2),
                (LatticeIndex::new(1, 3), 0.2),
                (LatticeIndex::new(4, 0), 0.15),
                (LatticeIndex::new(2, 4), 0.2),
            ],
        )
        .unwrap();
        let t = 0.2;
        let out = tr.propagate(&mix, t, 0.0).unwrap();
        let e = (-(p.total()) * t).exp();
        let expect = e * mix.mean() + (1.0 - e) * p.stationary_mean();
        assert!((out.mean() - expect).abs() < 1e-10, "{} vs {expect}", out.mean());

        // single-component mixtures reduce to propagate_component
        let single = BetaMixture::from_components(p, [(LatticeIndex::new(2, 1), 1.0)]).unwrap();
        let via_mix = tr.propagate(&single, t, 0.0).unwrap();
        let direct = tr.propagate_component(LatticeIndex::new(2, 1), t).unwrap();
        for (idx, w) in direct.iter() {
            assert!((via_mix.weight(idx) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn stationary_is_fixed_point() {
        let tr = transition(2.5, 4.0);
        let m = BetaMixture::stationary(*tr.params());
        for &t in &[0.05, 1.0, 17.0] {
            let out = tr.propagate(&m, t, 0.0).unwrap();
            assert_eq!(out.component_count(), 1);
            assert_eq!(out.weight(LatticeIndex::ORIGIN), 1.0);
        }
    }

    #[test]
    fn semigroup_property() {
        let tr = transition(2.0, 3.0);
        let p = *tr.params();
        let mix = BetaMixture::from_components(
            p,
            [(LatticeIndex::new(5, 4), 0.5), (LatticeIndex::new(2, 7), 0.5)],
        )
        .unwrap();
        let (s, t) = (0.15, 0.4);
        let two_step = tr.propagate(&tr.propagate(&mix, s, 0.0).unwrap(), t, 0.0).unwrap();
        let one_step = tr.propagate(&mix, s + t, 0.0).unwrap();
        for (idx, w) in one_step.iter() {
            assert!(
                (two_step.weight(idx) - w).abs() < 1e-9,
                "{idx:?}: {} vs {w}",
                two_step.weight(idx)
            );
        }
    }

    #[test]
    fn long_time_ergodicity() {
        let tr = transition(2.0, 2.0);
        let a1 = eigen_rate(1, tr.params());
        let t = 50.0 / a1;
        let m = tr
            .propagate_component(LatticeIndex::new(6, 3), t)
            .unwrap();
        assert!(m.weight(LatticeIndex::ORIGIN) >= 1.0 - 1e-8);
    }

    #[test]
    fn depth_guard() {
        let tr = Transition::new(ModelParams::new(2.0, 2.0).unwrap(), 8);
        assert!(matches!(
            tr.propagate_component(LatticeIndex::new(5, 4), 0.1),
            Err(Error::DepthExceeded { depth: 9, max: 8 })
        ));
    }
}

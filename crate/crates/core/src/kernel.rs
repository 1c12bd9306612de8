//! Closed-form scalar coefficients driving every filter step: the eigen-rate
//! ladder `a_n`, the drift coefficients `c_n`, exponential divided differences
//! `B_t`, and log-Beta ratios between lattice points.
//!
//! `B_t` over a rate ladder prefix equals `(-1)^k` times the divided
//! difference of `x -> exp(-x t)`, hence `t^k exp(-xi t) / k!` for some `xi`
//! between the extreme nodes. It is always nonnegative, but the explicit
//! alternating sum cancels catastrophically when `t * (node spread)` is
//! small; it is evaluated through the exponential of a bidiagonal node
//! matrix by shifted scaling-and-squaring, which never subtracts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::LatticeIndex;
use crate::scalar::{ln_beta, Real};

/// Mutation pressures of the diffusion; `delta` pushes toward allele a,
/// `delta_prime` toward allele A. Both must be >= 2 so the boundaries are
/// unattainable and the stationary Beta law exists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    delta: T,
    delta_prime: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(delta: T, delta_prime: T) -> Result<Self> {
        let two = T::of(2.0);
        if !delta.is_finite() || !delta_prime.is_finite() || delta < two || delta_prime < two {
            return Err(Error::InvalidParams {
                delta: delta.to_f64().unwrap_or(f64::NAN),
                delta_prime: delta_prime.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { delta, delta_prime })
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn delta_prime(&self) -> T {
        self.delta_prime
    }

    /// delta + delta_prime
    pub fn total(&self) -> T {
        self.delta + self.delta_prime
    }

    /// Mean of the stationary Beta(delta'/2, delta/2) law.
    pub fn stationary_mean(&self) -> T {
        self.delta_prime / self.total()
    }

    /// First Beta shape of the component at `idx`: i + delta'/2.
    pub fn shape_a(&self, idx: LatticeIndex) -> T {
        T::of_usize(idx.i) + self.delta_prime * T::of(0.5)
    }

    /// Second Beta shape of the component at `idx`: j + delta/2.
    pub fn shape_b(&self, idx: LatticeIndex) -> T {
        T::of_usize(idx.j) + self.delta * T::of(0.5)
    }
}

/// n-th eigenvalue magnitude of the generator: a_n = n (2(n-1) + delta + delta').
pub fn eigen_rate<T: Real>(n: usize, params: &ModelParams<T>) -> T {
    let nf = T::of_usize(n);
    nf * (T::of(2.0) * (nf - T::one()) + params.total())
}

/// c_n(rate) = n (2(n-1) + rate), with c_0 = 0.
pub fn drift_coeff<T: Real>(n: usize, rate: T) -> T {
    let nf = T::of_usize(n);
    nf * (T::of(2.0) * (nf - T::one()) + rate)
}

/// Precomputed eigen-rates and cumulative log rate products for one set of
/// model parameters. Built once, then read-only.
#[derive(Clone, Debug)]
pub struct RateLadder<T> {
    rates: Vec<T>,
    // ln_prefix[n] = sum_{m=1..n} ln a_m
    ln_prefix: Vec<T>,
}

impl<T: Real> RateLadder<T> {
    pub fn new(params: &ModelParams<T>, max_depth: usize) -> Self {
        let rates: Vec<T> = (0..=max_depth).map(|n| eigen_rate(n, params)).collect();
        let mut ln_prefix = Vec::with_capacity(max_depth + 1);
        let mut acc = T::zero();
        ln_prefix.push(acc);
        for &a in &rates[1..] {
            acc += a.ln();
            ln_prefix.push(acc);
        }
        Self { rates, ln_prefix }
    }

    pub fn max_depth(&self) -> usize {
        self.rates.len() - 1
    }

    pub fn rate(&self, n: usize) -> T {
        self.rates[n]
    }

    /// Nodes (a_top, a_{top-1}, ..., a_{top-count+1}) in decreasing order.
    pub fn descending(&self, top: usize, count: usize) -> Vec<T> {
        (0..count).map(|k| self.rates[top - k]).collect()
    }

    /// ln(a_top * a_{top-1} * ... * a_{top-len+1}); zero for len = 0.
    pub fn ln_rate_product(&self, top: usize, len: usize) -> T {
        self.ln_prefix[top] - self.ln_prefix[top - len]
    }
}

/// Taylor-phase norm target for the scaled bidiagonal matrix.
const SCALING_TARGET: f64 = 0.25;
const TAYLOR_MAX_TERMS: usize = 64;

/// The full triangle of `B_t` values over a decreasing node ladder:
/// the entry at `(r, c)` for `r <= c` is `(-1)^(c-r)` times the divided
/// difference of `x -> exp(-x t)` over `nodes_desc[r..=c]`. One evaluation
/// therefore serves every ladder prefix a propagation step needs.
///
/// Values are held in log form: deep ladders produce B values far below the
/// subnormal range whose every bit still matters once the matching rate
/// products (which are just as far above 1) multiply them back.
#[derive(Clone, Debug)]
pub struct BtTriangle<T> {
    m: usize,
    ln_values: Vec<T>,
}

impl<T: Real> BtTriangle<T> {
    pub fn size(&self) -> usize {
        self.m
    }

    /// ln of B_t over `nodes[r..=c]`; negative infinity when it vanishes.
    pub fn ln_get(&self, r: usize, c: usize) -> T {
        debug_assert!(r <= c && c < self.m);
        self.ln_values[r * self.m + c]
    }

    /// B_t over `nodes[r..=c]` in the linear domain.
    pub fn get(&self, r: usize, c: usize) -> T {
        self.ln_get(r, c).exp()
    }
}

/// Evaluate the `B_t` triangle for all node ranges at once.
///
/// Divided differences of a function are the entries of the function of the
/// bidiagonal matrix with the nodes on the diagonal and ones above it. For
/// the exponential that matrix function is evaluated by shifting out the
/// node mean and scaling-and-squaring: every entry of the scaled exponential
/// is positive, so the squaring phase involves no subtraction at all and the
/// result is accurate uniformly in `t` and the ladder depth. Naive
/// alternating-sum or difference-table evaluations lose all precision here
/// once the products of node gaps outgrow the result.
pub fn exp_dd_triangle<T: Real>(nodes_desc: &[T], t: T) -> Result<BtTriangle<T>> {
    if nodes_desc.is_empty() {
        return Err(Error::DistinctRates);
    }
    for w in nodes_desc.windows(2) {
        if !(w[0] > w[1]) {
            return Err(Error::DistinctRates);
        }
    }
    let m = nodes_desc.len();
    if t == T::zero() {
        // identity: B over a single node is 1, longer ranges vanish
        let mut ln_values = vec![T::neg_infinity(); m * m];
        for i in 0..m {
            ln_values[i * m + i] = T::zero();
        }
        return Ok(BtTriangle { m, ln_values });
    }

    // z_i = -a_i t, shifted by their mean
    let z: Vec<T> = nodes_desc.iter().map(|&a| -a * t).collect();
    let mu = z.iter().copied().sum::<T>() / T::of_usize(m);
    let spread = z
        .iter()
        .fold(T::zero(), |acc, &v| acc.max((v - mu).abs()));

    // scale so the Taylor phase sees a matrix of norm <= SCALING_TARGET
    let mut s = 0u32;
    let mut scale = T::one();
    while ((spread + T::one()) * scale).to_f64().unwrap_or(f64::INFINITY) > SCALING_TARGET {
        s += 1;
        scale = scale * T::of(0.5);
        if s > 120 {
            return Err(Error::NumericalInstability(
                "divided-difference scaling failed to converge".into(),
            ));
        }
    }

    // upper-triangular dense storage, row-major
    let at = |i: usize, j: usize| i * m + j;
    let mut f = vec![T::zero(); m * m]; // running exponential of the scaled matrix
    let mut term = vec![T::zero(); m * m];
    for i in 0..m {
        f[at(i, i)] = T::one();
        term[at(i, i)] = T::one();
    }
    let diag: Vec<T> = z.iter().map(|&v| (v - mu) * scale).collect();
    let sup = scale;
    for r in 1..=TAYLOR_MAX_TERMS {
        // term <- term * (scaled bidiagonal) / r
        let inv_r = T::of_usize(r).recip();
        let mut next = vec![T::zero(); m * m];
        for i in 0..m {
            for j in i..m {
                let mut v = term[at(i, j)] * diag[j];
                if j > i {
                    v += term[at(i, j - 1)] * sup;
                }
                next[at(i, j)] = v * inv_r;
            }
        }
        term = next;
        let mut max_term = T::zero();
        for i in 0..m {
            for j in i..m {
                f[at(i, j)] += term[at(i, j)];
                max_term = max_term.max(term[at(i, j)].abs());
            }
        }
        if max_term < T::epsilon() {
            break;
        }
    }
    // Square s times with a log scale per row: the true matrix is
    // diag(exp(rho)) * f. Keeping each row normalized to its largest entry
    // preserves every decade of the final values, which otherwise dive far
    // below the subnormal range on deep ladders.
    let mut rho = vec![mu * scale; m];
    for _ in 0..s {
        // w[l] = |F_{r,l}| expressed relative to the row's own top magnitude
        let mut sq = vec![T::zero(); m * m];
        let mut next_rho = rho.clone();
        for r in 0..m {
            let mut top = T::neg_infinity();
            for l in r..m {
                let g = f[at(r, l)];
                if g > T::zero() {
                    top = top.max(rho[l] + g.ln());
                }
            }
            if top == T::neg_infinity() {
                next_rho[r] = T::neg_infinity();
                continue;
            }
            let w: Vec<T> = (r..m)
                .map(|l| {
                    let g = f[at(r, l)];
                    if g > T::zero() {
                        (rho[l] + g.ln() - top).exp()
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let mut row_max = T::zero();
            for c in r..m {
                let mut acc = T::zero();
                for l in r..=c {
                    acc += w[l - r] * f[at(l, c)];
                }
                sq[at(r, c)] = acc;
                row_max = row_max.max(acc);
            }
            if row_max > T::zero() {
                let inv = row_max.recip();
                for c in r..m {
                    sq[at(r, c)] = sq[at(r, c)] * inv;
                }
                next_rho[r] = rho[r] + top + row_max.ln();
            } else {
                next_rho[r] = T::neg_infinity();
            }
        }
        f = sq;
        rho = next_rho;
    }

    // entry (r, c) is the divided difference of exp over the scaled nodes
    // r..c; undo the node scaling with powers of t, in log form
    let ln_t = t.ln();
    let mut ln_values = vec![T::neg_infinity(); m * m];
    for r in 0..m {
        for c in r..m {
            let g = f[at(r, c)];
            // entries are provably nonnegative; anything else is a failure
            if g < T::zero() || !g.is_finite() {
                return Err(Error::NumericalInstability(format!(
                    "divided difference ({r}, {c}) = {:e}",
                    g.to_f64().unwrap_or(f64::NAN)
                )));
            }
            if g > T::zero() && rho[r] > T::neg_infinity() {
                ln_values[at(r, c)] = rho[r] + g.ln() + T::of_usize(c - r) * ln_t;
            }
        }
        // the diagonal is exp(-a_r t) exactly; restore it analytically, since
        // the row scale tracks the row's largest entry and loses entries more
        // than ~745 log-units below it
        ln_values[at(r, r)] = -nodes_desc[r] * t;
    }
    Ok(BtTriangle { m, ln_values })
}

/// `B_t` over the given strictly decreasing nodes: `(-1)^k` times the divided
/// difference of `x -> exp(-x t)`. Nonnegative for all `t >= 0`.
pub fn exp_divided_difference<T: Real>(nodes_desc: &[T], t: T) -> Result<T> {
    let tri = exp_dd_triangle(nodes_desc, t)?;
    Ok(tri.get(0, tri.size() - 1))
}

/// log[ B(i + delta'/2, j + delta/2) / B(n + delta'/2, p + delta/2) ] for
/// `to = (i, j)`, `from = (n, p)`. Log-Gamma is the primary path; the
/// telescoping product over rates and drift coefficients serves as a test
/// oracle.
pub fn log_beta_ratio<T: Real>(from: LatticeIndex, to: LatticeIndex, params: &ModelParams<T>) -> T {
    if from == to {
        return T::zero();
    }
    ln_beta(params.shape_a(to), params.shape_b(to))
        - ln_beta(params.shape_a(from), params.shape_b(from))
}

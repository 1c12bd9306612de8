//! Spectral grid filter.
//!
//! The transition density has the eigenexpansion
//! p_t(x, y) = pi(y) sum_n e^{-a_n t} Q_n(x) Q_n(y) / c_n, where pi is the
//! stationary Beta density and Q_n are Jacobi polynomials orthogonal for it.
//! Discretizing on a midpoint grid gives an HMM whose forward pass checks
//! the exact filter without using any of its mixture algebra.

use crate::error::{Error, Result};
use crate::kernel::{eigen_rate, ModelParams};
use crate::observation::{Observation, ObservationModel};
use crate::scalar::ln_gamma;

/// Series terms beyond this are never needed at the gaps the oracle serves.
const MAX_SERIES_ORDER: usize = 400;
/// Truncate the eigenexpansion once e^{-a_K t} falls below this.
const SERIES_TAIL: f64 = 1e-14;

/// Values Q_0(x), ..., Q_k(x) of the Jacobi family orthogonal for
/// Beta(delta'/2, delta/2), via the three-term recurrence in u = 2x - 1.
fn jacobi_values(params: &ModelParams<f64>, k_max: usize, x: f64) -> Vec<f64> {
    let a = params.delta() / 2.0 - 1.0;
    let b = params.delta_prime() / 2.0 - 1.0;
    let u = 2.0 * x - 1.0;
    let mut q = Vec::with_capacity(k_max + 1);
    q.push(1.0);
    if k_max == 0 {
        return q;
    }
    q.push((a + b + 2.0) * u / 2.0 + (a - b) / 2.0);
    for n in 2..=k_max {
        let nf = n as f64;
        let c = 2.0 * nf + a + b;
        let den = 2.0 * nf * (nf + a + b) * (c - 2.0);
        let p1 = (c - 1.0) * (c * (c - 2.0) * u + a * a - b * b);
        let p2 = 2.0 * (nf + a - 1.0) * (nf + b - 1.0) * c;
        q.push((p1 * q[n - 1] - p2 * q[n - 2]) / den);
    }
    q
}

/// Squared norm of Q_n under the normalized stationary weight.
fn jacobi_norm(params: &ModelParams<f64>, n: usize) -> f64 {
    let a = params.delta() / 2.0 - 1.0;
    let b = params.delta_prime() / 2.0 - 1.0;
    if n == 0 {
        return 1.0;
    }
    let nf = n as f64;
    let ln = ln_gamma(nf + a + 1.0) + ln_gamma(nf + b + 1.0) + ln_gamma(a + b + 2.0)
        - ln_gamma(nf + a + b + 1.0)
        - ln_gamma(nf + 1.0)
        - ln_gamma(a + 1.0)
        - ln_gamma(b + 1.0);
    ln.exp() / (2.0 * nf + a + b + 1.0)
}

/// Smallest truncation order whose dropped tail is below `SERIES_TAIL`.
fn series_order(params: &ModelParams<f64>, t: f64) -> Result<usize> {
    for k in 1..=MAX_SERIES_ORDER {
        let tail = (-eigen_rate::<f64>(k, params) * t).exp();
        if tail <= SERIES_TAIL {
            return Ok(k);
        }
    }
    Err(Error::Truncation {
        order: MAX_SERIES_ORDER,
        tail: (-eigen_rate::<f64>(MAX_SERIES_ORDER, params) * t).exp(),
        bound: SERIES_TAIL,
    })
}

/// The discretized model: a row-stochastic transition matrix over the
/// quadrature nodes plus the stationary node masses. Each cell carries the
/// two Gauss-Legendre nodes, whose equal weights make every node sum below a
/// plain composite quadrature rule; against the midpoint rule this cuts the
/// per-step discretization bias from O(M^-2) to O(M^-4).
pub struct GridFilter {
    params: ModelParams<f64>,
    pub points: Vec<f64>,
    /// Stationary probability of each cell.
    pub prior: Vec<f64>,
    /// transition[i][j] = P(cell j after one gap | cell i), or `None` when
    /// the filter is run with zero gaps only.
    transition: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct GridStep {
    pub predictive_prob: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Debug)]
pub struct GridRun {
    pub steps: Vec<GridStep>,
    pub log_likelihood: f64,
}

impl GridFilter {
    /// Build the grid model for a constant inter-observation gap. A zero
    /// gap skips the transition matrix entirely.
    pub fn new(params: ModelParams<f64>, gap: f64, cells: usize) -> Result<Self> {
        assert!(cells >= 2);
        // two-point Gauss-Legendre nodes in each cell; both carry weight
        // 1/(2 cells), so downstream sums need no weight vector
        let g = 0.5 / 3.0f64.sqrt();
        let mut points = Vec::with_capacity(2 * cells);
        for i in 0..cells {
            let c = (i as f64 + 0.5) / cells as f64;
            points.push(c - g / cells as f64);
            points.push(c + g / cells as f64);
        }
        let m = points.len();
        let a = params.delta_prime() / 2.0;
        let b = params.delta() / 2.0;
        let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
        let mut prior: Vec<f64> = points
            .iter()
            .map(|&x| (ln_norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()).exp() / m as f64)
            .collect();
        let z: f64 = prior.iter().sum();
        prior.iter_mut().for_each(|p| *p /= z);

        let transition = if gap > 0.0 {
            let k = series_order(&params, gap)?;
            let decay: Vec<f64> = (0..=k)
                .map(|n| (-eigen_rate::<f64>(n, &params) * gap).exp())
                .collect();
            let norms: Vec<f64> = (0..=k).map(|n| jacobi_norm(&params, n)).collect();
            let q: Vec<Vec<f64>> = points
                .iter()
                .map(|&x| jacobi_values(&params, k, x))
                .collect();
            let mut rows = Vec::with_capacity(m);
            for i in 0..m {
                let mut row: Vec<f64> = (0..m)
                    .map(|j| {
                        let mut s = 0.0;
                        for n in 0..=k {
                            s += decay[n] * q[i][n] * q[j][n] / norms[n];
                        }
                        (s * prior[j]).max(0.0)
                    })
                    .collect();
                let rz: f64 = row.iter().sum();
                if !(rz > 0.0) {
                    return Err(Error::NumericalInstability(format!(
                        "grid transition row {i} degenerate"
                    )));
                }
                row.iter_mut().for_each(|v| *v /= rz);
                rows.push(row);
            }
            Some(rows)
        } else {
            None
        };
        Ok(Self {
            params,
            points,
            prior,
            transition,
        })
    }

    pub fn params(&self) -> &ModelParams<f64> {
        &self.params
    }

    /// Row-stochastic transition matrix; panics if built with `gap = 0`.
    pub fn transition(&self) -> &Vec<Vec<f64>> {
        self.transition.as_ref().expect("gap was zero")
    }

    fn propagate(&self, p: &[f64]) -> Vec<f64> {
        let t = self.transition();
        let m = p.len();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for j in 0..m {
                out[j] += pi * t[i][j];
            }
        }
        out
    }

    /// Forward pass over a regularly spaced series: the first observation
    /// updates the stationary prior directly, every later one follows a
    /// single transition application.
    pub fn run(&self, obs: &[Observation], om: &ObservationModel) -> Result<GridRun> {
        let mut p = self.prior.clone();
        let mut steps = Vec::with_capacity(obs.len());
        let mut loglik = 0.0f64;
        for (k, &y) in obs.iter().enumerate() {
            om.validate(y)?;
            if k > 0 {
                p = self.propagate(&p);
            }
            let mut pred = 0.0f64;
            for (i, &x) in self.points.iter().enumerate() {
                let f: f64 = om.density(x, y);
                p[i] *= f;
                pred += p[i];
            }
            if !(pred > 0.0) {
                return Err(Error::ImpossibleObservation);
            }
            loglik += pred.ln();
            p.iter_mut().for_each(|v| *v /= pred);
            let mean: f64 = self.points.iter().zip(&p).map(|(&x, &w)| x * w).sum();
            let second: f64 = self.points.iter().zip(&p).map(|(&x, &w)| x * x * w).sum();
            steps.push(GridStep {
                predictive_prob: pred,
                mean,
                variance: second - mean * mean,
            });
        }
        Ok(GridRun {
            steps,
            log_likelihood: loglik,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_inner(params: &ModelParams<f64>, n1: usize, n2: usize) -> f64 {
        // midpoint quadrature of Q_{n1} Q_{n2} pi on a fine grid
        let m = 20_000;
        let a = params.delta_prime() / 2.0;
        let b = params.delta() / 2.0;
        let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
        let mut s = 0.0;
        for i in 0..m {
            let x = (i as f64 + 0.5) / m as f64;
            let q = jacobi_values(params, n1.max(n2), x);
            let w = (ln_norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()).exp();
            s += q[n1] * q[n2] * w / m as f64;
        }
        s
    }

    #[test]
    fn jacobi_orthogonality_and_norms() {
        let params = ModelParams::new(4.0, 6.0).unwrap();
        for n in 0..5usize {
            let c = quad_inner(&params, n, n);
            assert!(
                (c - jacobi_norm(&params, n)).abs() < 1e-6,
                "n={n}: {c} vs {}",
                jacobi_norm(&params, n)
            );
            if n > 0 {
                assert!(quad_inner(&params, n, 0).abs() < 1e-8);
                assert!(quad_inner(&params, n, n - 1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transition_rows_stochastic_and_stationary() {
        let params = ModelParams::new(4.0, 6.0).unwrap();
        let gf = GridFilter::new(params, 0.5, 200).unwrap();
        let t = gf.transition();
        for row in t {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // pi T = pi up to discretization error
        let mut out = vec![0.0; gf.points.len()];
        for (i, &pi) in gf.prior.iter().enumerate() {
            for (j, &tij) in t[i].iter().enumerate() {
                out[j] += pi * tij;
            }
        }
        let err: f64 = out
            .iter()
            .zip(&gf.prior)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn long_gap_forgets_the_start() {
        let params = ModelParams::new(3.0, 4.0).unwrap();
        let gf = GridFilter::new(params, 10.0, 150).unwrap();
        let t = gf.transition();
        // every row should be the stationary cell mass
        for row in t.iter().step_by(37) {
            let err: f64 = row
                .iter()
                .zip(&gf.prior)
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(err < 1e-8, "{err}");
        }
    }

    #[test]
    fn grid_matches_exact_single_update() {
        // first step is a pure Bayes update of the stationary law
        let params = ModelParams::new(2.0, 6.0).unwrap();
        let gf = GridFilter::new(params, 0.0, 400).unwrap();
        let run = gf.run(&[1], &ObservationModel::Bernoulli).unwrap();
        assert!((run.steps[0].predictive_prob - 0.75).abs() < 1e-5);
        // posterior is Beta(4, 1), mean 0.8
        assert!((run.steps[0].mean - 0.8).abs() < 1e-5);
    }
}

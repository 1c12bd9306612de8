//! Reference values for P_t h_{n,p} by direct integration.
//!
//! The functions m_{n,p}(t) = P_t h_{n,p}(x) satisfy the closed triangular
//! system m' = -a_{n+p} m_{n,p} + c_n(delta') m_{n-1,p} + c_p(delta) m_{n,p-1}
//! with m_{0,0} = 1, so integrating it with RK4 from m_{n,p}(0) = x^n(1-x)^p
//! gives an independent check of the series expansion.

use crate::kernel::{drift_coeff, eigen_rate, ModelParams};

/// Dense triangular table m[n][p] for n + p <= depth.
#[derive(Clone, Debug)]
pub struct MomentTable {
    pub depth: usize,
    pub values: Vec<Vec<f64>>,
}

impl MomentTable {
    fn at_point(depth: usize, x: f64) -> Self {
        let values = (0..=depth)
            .map(|n| {
                (0..=depth - n)
                    .map(|p| x.powi(n as i32) * (1.0 - x).powi(p as i32))
                    .collect()
            })
            .collect();
        Self { depth, values }
    }

    pub fn get(&self, n: usize, p: usize) -> f64 {
        self.values[n][p]
    }
}

fn derivative(table: &MomentTable, params: &ModelParams<f64>) -> MomentTable {
    let depth = table.depth;
    let mut out = MomentTable {
        depth,
        values: table.values.clone(),
    };
    for n in 0..=depth {
        for p in 0..=depth - n {
            let mut d = -eigen_rate::<f64>(n + p, params) * table.get(n, p);
            if n > 0 {
                d += drift_coeff(n, params.delta_prime()) * table.get(n - 1, p);
            }
            if p > 0 {
                d += drift_coeff(p, params.delta()) * table.get(n, p - 1);
            }
            out.values[n][p] = d;
        }
    }
    out
}

fn axpy(y: &mut MomentTable, a: f64, x: &MomentTable) {
    for (yr, xr) in y.values.iter_mut().zip(&x.values) {
        for (yv, xv) in yr.iter_mut().zip(xr) {
            *yv += a * *xv;
        }
    }
}

/// Integrate the moment system from the point mass at `x` over `[0, t]`.
///
/// The step count scales with the stiffest rate a_depth so the explicit
/// scheme stays well inside its stability region.
pub fn propagate_moments(x: f64, t: f64, depth: usize, params: &ModelParams<f64>) -> MomentTable {
    let mut m = MomentTable::at_point(depth, x);
    if t <= 0.0 {
        return m;
    }
    let top_rate = eigen_rate::<f64>(depth, params);
    let steps = ((t * top_rate * 8.0).ceil() as usize).max((t / 1e-4).ceil() as usize).max(64);
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = derivative(&m, params);
        let mut s2 = m.clone();
        axpy(&mut s2, h / 2.0, &k1);
        let k2 = derivative(&s2, params);
        let mut s3 = m.clone();
        axpy(&mut s3, h / 2.0, &k2);
        let k3 = derivative(&s3, params);
        let mut s4 = m.clone();
        axpy(&mut s4, h, &k3);
        let k4 = derivative(&s4, params);
        axpy(&mut m, h / 6.0, &k1);
        axpy(&mut m, h / 3.0, &k2);
        axpy(&mut m, h / 3.0, &k3);
        axpy(&mut m, h / 6.0, &k4);
    }
    m
}

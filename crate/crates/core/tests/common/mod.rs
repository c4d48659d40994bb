//! Shared helpers for the integration suites: an independent dense
//! assembly of the discrete operators and a damped-Newton solver for the
//! projected stationarity system. Everything here goes through explicit
//! dense matrices on purpose; it must not reuse the library's operator
//! path it is checking.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use wflow::grid::{Field, Grid};
use wflow::potential::Potential;

/// Dense mirror-ghost zero-flux Laplacian, assembled entry by entry.
pub fn dense_laplacian(grid: &Grid) -> DMatrix<f64> {
    let n = grid.total_cells();
    let mut m = DMatrix::zeros(n, n);
    for row in 0..n {
        let mi = grid.unflatten(row);
        for axis in 0..grid.dim() {
            let cells = grid.cells()[axis] as i64;
            let h = grid.spacing()[axis];
            let w = 1.0 / (h * h);
            for dir in [-1i64, 1] {
                let j = (mi[axis] as i64 + dir).clamp(0, cells - 1) as usize;
                let mut mj = mi.clone();
                mj[axis] = j;
                let mut col = 0;
                for (a, &idx) in mj.iter().enumerate() {
                    col += idx * grid.stride(a);
                }
                m[(row, col)] += w;
                m[(row, row)] -= w;
            }
        }
    }
    m
}

pub fn to_vector(field: &Field) -> DVector<f64> {
    DVector::from_column_slice(field.values())
}

pub fn to_field(grid: &Arc<Grid>, v: &DVector<f64>) -> Field {
    Field::new(grid, v.as_slice().to_vec()).expect("oracle produced non-finite values")
}

/// Damped-Newton solver for one implicit step on dense matrices:
/// stationarity of the step objective over the fixed-mean set, written as
/// a saddle system in the field and the constraint multiplier.
pub struct NewtonOracle {
    grid: Arc<Grid>,
    lap: DMatrix<f64>,
    potential: Potential,
}

impl NewtonOracle {
    pub fn new(grid: &Arc<Grid>, potential: &Potential) -> NewtonOracle {
        NewtonOracle {
            grid: Arc::clone(grid),
            lap: dense_laplacian(grid),
            potential: potential.clone(),
        }
    }

    fn mu(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = -(&self.lap * w);
        for (o, &wi) in out.iter_mut().zip(w.iter()) {
            *o += self.potential.well_d1(wi);
        }
        out
    }

    /// `-lap(mu) + well''(w) mu`.
    fn bracket(&self, w: &DVector<f64>) -> DVector<f64> {
        let mu = self.mu(w);
        let mut out = -(&self.lap * &mu);
        for i in 0..w.len() {
            out[i] += self.potential.well_d2(w[i]) * mu[i];
        }
        out
    }

    /// Step objective with the cell-volume weighting.
    pub fn objective(&self, w: &DVector<f64>, f: &DVector<f64>, tau: f64) -> f64 {
        let cv = self.grid.cell_volume();
        let mut fidelity = 0.0;
        for i in 0..w.len() {
            fidelity += (w[i] - f[i]) * (w[i] - f[i]);
        }
        let mu = self.mu(w);
        let mut energy = 0.0;
        for m in mu.iter() {
            energy += m * m;
        }
        0.5 * cv * fidelity + tau * 0.5 * cv * energy
    }

    /// Norm of the mean-projected stationarity bracket, in the same
    /// measure the solver's stopping rule uses.
    pub fn bracket_norm(&self, w: &DVector<f64>, f: &DVector<f64>, tau: f64) -> f64 {
        let n = w.len() as f64;
        let b = self.bracket(w);
        let mut r = DVector::zeros(w.len());
        for i in 0..w.len() {
            r[i] = (w[i] - f[i]) + tau * b[i];
        }
        let mean = r.iter().sum::<f64>() / n;
        for v in r.iter_mut() {
            *v -= mean;
        }
        let cv = self.grid.cell_volume();
        (cv * r.iter().map(|v| v * v).sum::<f64>()).sqrt() / tau
    }

    /// Jacobian of `(w - f) + tau bracket(w)`:
    /// `I + tau (A^2 + diag(well'''(w) mu))` with `A = -lap + diag(well''(w))`.
    fn jacobian(&self, w: &DVector<f64>, tau: f64) -> DMatrix<f64> {
        let n = w.len();
        let mu = self.mu(w);
        let mut a = -self.lap.clone();
        for i in 0..n {
            a[(i, i)] += self.potential.well_d2(w[i]);
        }
        let mut j = &a * &a;
        for i in 0..n {
            j[(i, i)] += self.potential.well_d3(w[i]) * mu[i];
        }
        let mut out = j * tau;
        for i in 0..n {
            out[(i, i)] += 1.0;
        }
        out
    }

    /// One implicit step by damped Newton on the saddle system; panics if
    /// the oracle itself cannot converge, since every acceptance test
    /// depends on it.
    pub fn solve_step(&self, f: &DVector<f64>, tau: f64, tol_bracket: f64) -> DVector<f64> {
        let n = f.len();
        let alpha = f.iter().sum::<f64>() / n as f64;
        let mut w = f.clone();
        let mut lambda = {
            // start with the multiplier that makes the residual mean-free
            let b = self.bracket(&w);
            -tau * b.iter().sum::<f64>() / n as f64
        };

        for _ in 0..200 {
            if self.bracket_norm(&w, f, tau) <= tol_bracket {
                return w;
            }
            let b = self.bracket(&w);
            let mut residual = DVector::zeros(n + 1);
            for i in 0..n {
                residual[i] = (w[i] - f[i]) + tau * b[i] + lambda;
            }
            residual[n] = w.iter().sum::<f64>() / n as f64 - alpha;

            let mut kkt = DMatrix::zeros(n + 1, n + 1);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.jacobian(&w, tau));
            for i in 0..n {
                kkt[(i, n)] = 1.0;
                kkt[(n, i)] = 1.0 / n as f64;
            }
            let delta = kkt
                .lu()
                .solve(&(-residual))
                .expect("singular saddle system in the dense oracle");

            // damp on the merit of the full saddle residual
            let merit = |w_try: &DVector<f64>, l_try: f64| -> f64 {
                let b = self.bracket(w_try);
                let mut m = 0.0;
                for i in 0..n {
                    let r = (w_try[i] - f[i]) + tau * b[i] + l_try;
                    m += r * r;
                }
                let c = w_try.iter().sum::<f64>() / n as f64 - alpha;
                m + c * c
            };
            let base = merit(&w, lambda);
            let mut beta = 1.0;
            let mut stepped = false;
            for _ in 0..40 {
                let w_try = &w + beta * delta.rows(0, n);
                let l_try = lambda + beta * delta[n];
                if merit(&w_try, l_try) < base {
                    w = w_try;
                    lambda = l_try;
                    stepped = true;
                    break;
                }
                beta *= 0.5;
            }
            assert!(stepped, "dense oracle line search failed");
        }
        panic!("dense oracle did not converge to {tol_bracket:e}");
    }
}

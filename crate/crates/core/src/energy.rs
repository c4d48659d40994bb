//! The bending-type energy, its chemical potential, and the per-step
//! functional of the implicit scheme.
//!
//! With `mu = -lap(w) + well'(w)`, the energy is `E(w) = 1/2 ||mu||^2` and
//! one implicit step minimizes `F(w) = 1/2 ||w - f||^2 + tau E(w)` over
//! fields with the mean of `f`. The constrained first variation and the
//! stationarity residual both live here; the minimizer and the time loop
//! only combine them.

use thiserror::Error;

use crate::grid::{Field, FieldError};
use crate::potential::Potential;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("time step must be positive (got {0})")]
    NonPositiveTau(f64),
}

impl From<FieldError> for EnergyError {
    fn from(_: FieldError) -> Self {
        EnergyError::GridMismatch
    }
}

/// `mu = -lap(w) + well'(w)` with the zero-flux Laplacian.
pub fn chemical_potential(w: &Field, p: &Potential) -> Field {
    let lap = w.laplacian_neumann();
    lap.zip_map(w, |l, wi| -l + p.well_d1(wi))
}

/// `E(w) = 1/2 ||mu||^2`; nonnegative by construction.
pub fn willmore_energy(w: &Field, p: &Potential) -> f64 {
    let mu = chemical_potential(w, p);
    let e = 0.5 * mu.inner(&mu).expect("same grid");
    debug_assert!(e >= 0.0 || e.is_nan());
    e
}

/// Implicit-step objective `1/2 ||w - f||^2 + tau E(w)`.
pub fn mm_functional(w: &Field, f: &Field, tau: f64, p: &Potential) -> Result<f64, EnergyError> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(EnergyError::NonPositiveTau(tau));
    }
    if !w.same_grid(f) {
        return Err(EnergyError::GridMismatch);
    }
    let diff = w.sub(f);
    let value = 0.5 * diff.inner(&diff)? + tau * willmore_energy(w, p);
    debug_assert!(value >= 0.0 || value.is_nan());
    Ok(value)
}

/// Riesz representative (in the discrete inner product) of the constrained
/// first variation of the step objective along mean-zero directions:
/// `project_mean_zero((w - f) + tau (-lap(mu) + well''(w) mu))`.
///
/// For any mean-zero direction `d`, `inner(gradient, d)` equals the
/// directional derivative of [`mm_functional`]; it vanishes at constrained
/// critical points. Callers keep `w` and `f` on the same mean (the
/// constraint surface); the formula itself does not require it.
pub fn gradient_mm(w: &Field, f: &Field, tau: f64, p: &Potential) -> Result<Field, EnergyError> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(EnergyError::NonPositiveTau(tau));
    }
    if !w.same_grid(f) {
        return Err(EnergyError::GridMismatch);
    }
    let mu = chemical_potential(w, p);
    let lap_mu = mu.laplacian_neumann();
    let w_vals = w.values();
    let f_vals = f.values();
    let mu_vals = mu.values();
    let lap_vals = lap_mu.values();
    let mut out = Vec::with_capacity(w_vals.len());
    for i in 0..w_vals.len() {
        let bracket = -lap_vals[i] + p.well_d2(w_vals[i]) * mu_vals[i];
        out.push((w_vals[i] - f_vals[i]) + tau * bracket);
    }
    Ok(Field::from_raw(w.grid(), out).project_mean_zero())
}

/// Stationarity residual `-lap(mu) + well''(w) mu`, projected to mean
/// zero, together with its discrete L2 norm. At an exact step minimizer
/// its norm is bounded by `||w - f|| / tau`.
pub fn el_residual(w: &Field, p: &Potential) -> (Field, f64) {
    let assembly = EnergyAssembly::new(w, p);
    let norm = assembly.residual_norm;
    (assembly.residual, norm)
}

/// Everything the time loop records about one field: the chemical
/// potential, the energy, the multiplier mean, and the stationarity
/// residual.
#[derive(Debug, Clone)]
pub struct EnergyAssembly {
    pub mu: Field,
    pub energy: f64,
    /// Mean of `well''(w) mu`, the discrete Lagrange multiplier of the
    /// mean constraint.
    pub multiplier: f64,
    pub residual: Field,
    pub residual_norm: f64,
}

impl EnergyAssembly {
    pub fn new(w: &Field, p: &Potential) -> EnergyAssembly {
        let mu = chemical_potential(w, p);
        let energy = 0.5 * mu.inner(&mu).expect("same grid");
        debug_assert!(energy >= 0.0 || energy.is_nan());
        let lap_mu = mu.laplacian_neumann();
        let curvature_term = w.zip_map(&mu, |wi, mi| p.well_d2(wi) * mi);
        let multiplier = curvature_term.mean();
        // subtracting the full mean (rather than only the multiplier term)
        // keeps the residual mean-zero to roundoff; the zero-flux Laplacian
        // contributes no mean of its own
        let bracket = lap_mu.zip_map(&curvature_term, |l, c| -l + c);
        let residual = bracket.project_mean_zero();
        let residual_norm = residual.norm_l2();
        EnergyAssembly {
            mu,
            energy,
            multiplier,
            residual,
            residual_norm,
        }
    }
}

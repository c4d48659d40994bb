//! The split double-well nonlinearity driving the flow.
//!
//! A potential is stored as two derivative chains: a convex part with
//! value and slope zero at the origin, and a smooth part whose second
//! derivative is bounded. The structural assumptions are not trusted;
//! [`validate_assumptions`] checks them by dense sampling together with
//! finite-difference consistency of the supplied derivative chains, so
//! user-defined potentials get the same scrutiny as the built-in quartic.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, PartialEq)]
pub enum PotentialError {
    #[error("sample interval must satisfy r_min < r_max (got [{0}, {1}])")]
    BadInterval(f64, f64),
    #[error("need at least 100 samples (got {0})")]
    TooFewSamples(usize),
    #[error("polynomial needs at least one coefficient")]
    EmptyPolynomial,
}

/// A scalar function together with its first three derivatives.
#[derive(Clone)]
pub struct ScalarChain {
    fns: [ScalarFn; 4],
}

impl ScalarChain {
    pub fn new(value: ScalarFn, d1: ScalarFn, d2: ScalarFn, d3: ScalarFn) -> Self {
        ScalarChain {
            fns: [value, d1, d2, d3],
        }
    }

    /// Builds the chain from polynomial coefficients in ascending order
    /// (`coeffs[k]` multiplies `r^k`); derivatives are exact.
    pub fn from_polynomial(coeffs: &[f64]) -> Result<Self, PotentialError> {
        if coeffs.is_empty() {
            return Err(PotentialError::EmptyPolynomial);
        }
        let mut levels: Vec<Vec<f64>> = vec![coeffs.to_vec()];
        for _ in 0..3 {
            levels.push(differentiate(levels.last().unwrap()));
        }
        let mut fns: Vec<ScalarFn> = Vec::with_capacity(4);
        for c in levels {
            fns.push(Arc::new(move |r| horner(&c, r)));
        }
        let fns: [ScalarFn; 4] = fns.try_into().map_err(|_| PotentialError::EmptyPolynomial)?;
        Ok(ScalarChain { fns })
    }

    /// Evaluates the `level`-th derivative (0 = the function itself).
    pub fn eval(&self, level: usize, r: f64) -> f64 {
        (self.fns[level])(r)
    }
}

impl fmt::Debug for ScalarChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarChain {..}")
    }
}

fn horner(coeffs: &[f64], r: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * r + c;
    }
    acc
}

fn differentiate(coeffs: &[f64]) -> Vec<f64> {
    if coeffs.len() <= 1 {
        return vec![0.0];
    }
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Split double-well potential: convex part + bounded-curvature part,
/// both C^3, with the claimed structural constants.
#[derive(Clone, Debug)]
pub struct Potential {
    name: String,
    convex: ScalarChain,
    smooth: ScalarChain,
    smooth_dd_bound: f64,
    coercivity_constant: f64,
}

impl Potential {
    pub fn from_parts(
        name: impl Into<String>,
        convex: ScalarChain,
        smooth: ScalarChain,
        smooth_dd_bound: f64,
        coercivity_constant: f64,
    ) -> Self {
        Potential {
            name: name.into(),
            convex,
            smooth,
            smooth_dd_bound,
            coercivity_constant,
        }
    }

    /// The classic quartic well `(r^2 - 1)^2 / 4`, split as convex
    /// `r^4/4` plus smooth `(1 - 2 r^2)/4`. The curvature bound 1 and the
    /// coercivity constant 1/4 are both tight.
    pub fn quartic_double_well() -> Self {
        let convex = ScalarChain::new(
            Arc::new(|r: f64| 0.25 * r * r * r * r),
            Arc::new(|r: f64| r * r * r),
            Arc::new(|r: f64| 3.0 * r * r),
            Arc::new(|r: f64| 6.0 * r),
        );
        let smooth = ScalarChain::new(
            Arc::new(|r: f64| 0.25 * (1.0 - 2.0 * r * r)),
            Arc::new(|r: f64| -r),
            Arc::new(|_| -1.0),
            Arc::new(|_| 0.0),
        );
        Potential::from_parts("quartic", convex, smooth, 1.0, 0.25)
    }

    /// Builds a potential from polynomial coefficient lists (ascending
    /// powers) for the two parts. The claimed curvature bound and
    /// coercivity constant are estimated by dense sampling on [-10, 10]
    /// with a little headroom; [`validate_assumptions`] remains the
    /// authority on whether they hold on the interval a run needs.
    pub fn from_polynomials(
        name: impl Into<String>,
        convex_coeffs: &[f64],
        smooth_coeffs: &[f64],
    ) -> Result<Self, PotentialError> {
        let convex = ScalarChain::from_polynomial(convex_coeffs)?;
        let smooth = ScalarChain::from_polynomial(smooth_coeffs)?;
        let samples = 20_001;
        let mut dd_max: f64 = 0.0;
        let mut radial_min = f64::INFINITY;
        for i in 0..samples {
            let r = -10.0 + 20.0 * i as f64 / (samples - 1) as f64;
            dd_max = dd_max.max(smooth.eval(2, r).abs());
            let slope = convex.eval(1, r) + smooth.eval(1, r);
            radial_min = radial_min.min(r * slope);
        }
        let smooth_dd_bound = dd_max + 1e-9 * (1.0 + dd_max);
        let coercivity_constant = (-radial_min).max(0.0) + 1e-5 * (1.0 + radial_min.abs());
        Ok(Potential {
            name: name.into(),
            convex,
            smooth,
            smooth_dd_bound,
            coercivity_constant,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn smooth_dd_bound(&self) -> f64 {
        self.smooth_dd_bound
    }

    pub fn coercivity_constant(&self) -> f64 {
        self.coercivity_constant
    }

    pub fn convex_chain(&self) -> &ScalarChain {
        &self.convex
    }

    pub fn smooth_chain(&self) -> &ScalarChain {
        &self.smooth
    }

    pub fn convex_value(&self, r: f64) -> f64 {
        self.convex.eval(0, r)
    }

    pub fn convex_d1(&self, r: f64) -> f64 {
        self.convex.eval(1, r)
    }

    /// Value of the full well (convex + smooth parts).
    pub fn well(&self, r: f64) -> f64 {
        self.convex.eval(0, r) + self.smooth.eval(0, r)
    }

    pub fn well_d1(&self, r: f64) -> f64 {
        self.convex.eval(1, r) + self.smooth.eval(1, r)
    }

    pub fn well_d2(&self, r: f64) -> f64 {
        self.convex.eval(2, r) + self.smooth.eval(2, r)
    }

    pub fn well_d3(&self, r: f64) -> f64 {
        self.convex.eval(3, r) + self.smooth.eval(3, r)
    }
}

/// One structural assumption, checked over the sample grid.
#[derive(Debug, Clone)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Sample point with the worst margin (or largest consistency error).
    pub worst_r: f64,
    /// The measured extremal value at `worst_r`.
    pub worst_value: f64,
    /// The value the check compared against.
    pub threshold: f64,
    pub violations: usize,
}

impl fmt::Display for AssumptionCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (worst {:.6e} vs threshold {:.6e} at r = {:.6}, {} violating samples)",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.worst_value,
            self.threshold,
            self.worst_r,
            self.violations,
        )
    }
}

#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub r_min: f64,
    pub r_max: f64,
    pub samples: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "assumption checks on [{}, {}] with {} samples:",
            self.r_min, self.r_max, self.samples
        )?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

/// Checks the structural assumptions on a dense sample grid:
/// the convex part vanishes to first order at the origin and has
/// nonnegative curvature, the smooth part respects its claimed curvature
/// bound, the full well is nonnegative with `r * well'(r)` bounded below
/// by the claimed coercivity constant, and every supplied derivative is
/// consistent with a central difference of the previous level.
///
/// Assumption failures are reported, not raised; only invalid arguments
/// produce an error.
pub fn validate_assumptions(
    p: &Potential,
    r_min: f64,
    r_max: f64,
    samples: usize,
) -> Result<AssumptionReport, PotentialError> {
    if !(r_min.is_finite() && r_max.is_finite() && r_min < r_max) {
        return Err(PotentialError::BadInterval(r_min, r_max));
    }
    if samples < 100 {
        return Err(PotentialError::TooFewSamples(samples));
    }

    let grid: Vec<f64> = (0..samples)
        .map(|i| r_min + (r_max - r_min) * i as f64 / (samples - 1) as f64)
        .collect();

    let mut checks = Vec::new();

    // convex part pinned at the origin: value and slope both zero
    {
        let v0 = p.convex_value(0.0);
        let s0 = p.convex_d1(0.0);
        let worst = if v0.abs() >= s0.abs() { v0 } else { s0 };
        let tol = 1e-12;
        checks.push(AssumptionCheck {
            name: "convex-origin",
            passed: v0.abs() <= tol && s0.abs() <= tol,
            worst_r: 0.0,
            worst_value: worst,
            threshold: tol,
            violations: usize::from(v0.abs() > tol) + usize::from(s0.abs() > tol),
        });
    }

    // convexity: second derivative of the convex part nonnegative
    checks.push(lower_bound_check(
        "convexity",
        &grid,
        |r| p.convex.eval(2, r),
        0.0,
        1e-12,
    ));

    // curvature bound on the smooth part
    {
        let bound = p.smooth_dd_bound;
        let tol = bound + 1e-12 * (1.0 + bound);
        let mut worst_r = grid[0];
        let mut worst = 0.0f64;
        let mut violations = 0;
        for &r in &grid {
            let v = p.smooth.eval(2, r).abs();
            if v > worst {
                worst = v;
                worst_r = r;
            }
            if v > tol {
                violations += 1;
            }
        }
        checks.push(AssumptionCheck {
            name: "curvature-bound",
            passed: violations == 0,
            worst_r,
            worst_value: worst,
            threshold: tol,
            violations,
        });
    }

    // full well nonnegative
    checks.push(lower_bound_check(
        "nonnegativity",
        &grid,
        |r| p.well(r),
        0.0,
        1e-12,
    ));

    // coercivity: r * well'(r) >= -C0
    checks.push(lower_bound_check(
        "coercivity",
        &grid,
        |r| r * p.well_d1(r),
        -p.coercivity_constant,
        1e-12 * (1.0 + p.coercivity_constant),
    ));

    // derivative chains consistent under central differences
    {
        let mut worst_r = grid[0];
        let mut violations = 0;
        let mut worst_err = 0.0f64;
        let mut worst_tol = 1.0f64;
        for chain in [&p.convex, &p.smooth] {
            for level in 1..=3usize {
                for &r in &grid {
                    let delta = 1e-5 * r.abs().max(1.0);
                    let fd =
                        (chain.eval(level - 1, r + delta) - chain.eval(level - 1, r - delta))
                            / (2.0 * delta);
                    let supplied = chain.eval(level, r);
                    let err = (fd - supplied).abs();
                    let tol = 1e-6 * (1.0 + fd.abs().max(supplied.abs()));
                    if err > tol {
                        violations += 1;
                    }
                    if err * worst_tol > worst_err * tol {
                        worst_err = err;
                        worst_tol = tol;
                        worst_r = r;
                    }
                }
            }
        }
        checks.push(AssumptionCheck {
            name: "derivative-consistency",
            passed: violations == 0,
            worst_r,
            worst_value: worst_err,
            threshold: worst_tol,
            violations,
        });
    }

    Ok(AssumptionReport {
        r_min,
        r_max,
        samples,
        checks,
    })
}

fn lower_bound_check(
    name: &'static str,
    grid: &[f64],
    f: impl Fn(f64) -> f64,
    bound: f64,
    slack: f64,
) -> AssumptionCheck {
    let mut worst = f64::INFINITY;
    let mut worst_r = grid[0];
    let mut violations = 0;
    for &r in grid {
        let v = f(r);
        if v < worst {
            worst = v;
            worst_r = r;
        }
        if v < bound - slack {
            violations += 1;
        }
    }
    AssumptionCheck {
        name,
        passed: violations == 0,
        worst_r,
        worst_value: worst,
        threshold: bound - slack,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartic_matches_closed_forms() {
        let p = Potential::quartic_double_well();
        assert_eq!(p.well(1.0), 0.0);
        assert_eq!(p.well(-1.0), 0.0);
        assert_eq!(p.well_d1(0.0), 0.0);
        assert_eq!(p.convex_value(0.0), 0.0);
        assert_eq!(p.convex_d1(0.0), 0.0);
        assert_eq!(p.well_d1(1.0), 0.0);
        assert_eq!(p.well_d1(-1.0), 0.0);
        assert_eq!(p.well_d2(0.0), -1.0);
        assert_eq!(p.well_d2(1.0), 2.0);
        assert_eq!(p.well_d2(-1.0), 2.0);
        assert_eq!(p.well_d3(0.5), 3.0);
        assert_eq!(p.smooth_dd_bound(), 1.0);
        assert_eq!(p.coercivity_constant(), 0.25);
        // (r^2-1)^2/4 at a few points
        for r in [-2.0, -0.3, 0.7, 1.5] {
            let expect = (r * r - 1.0) * (r * r - 1.0) / 4.0;
            assert!((p.well(r) - expect).abs() <= 1e-15 * (1.0 + expect));
        }
    }

    #[test]
    fn quartic_coercivity_constant_is_tight() {
        // independent scan of r * well'(r) = r^4 - r^2 over [-10, 10]
        let p = Potential::quartic_double_well();
        let samples = 200_001;
        let mut min = f64::INFINITY;
        for i in 0..samples {
            let r = -10.0 + 20.0 * i as f64 / (samples - 1) as f64;
            min = min.min(r * p.well_d1(r));
        }
        assert!((min + 0.25).abs() < 1e-6, "scanned min {min}");
    }

    #[test]
    fn validator_accepts_quartic() {
        let p = Potential::quartic_double_well();
        let report = validate_assumptions(&p, -10.0, 10.0, 10_000).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn validator_rejects_concave_convex_part() {
        let convex = ScalarChain::from_polynomial(&[0.0, 0.0, -1.0]).unwrap(); // -r^2
        let smooth = ScalarChain::from_polynomial(&[0.0]).unwrap();
        let p = Potential::from_parts("bad", convex, smooth, 1.0, 1.0);
        let report = validate_assumptions(&p, -2.0, 2.0, 500).unwrap();
        let convexity = report.check("convexity").unwrap();
        assert!(!convexity.passed);
        assert_eq!(convexity.violations, 500, "fails at every sample");
    }

    #[test]
    fn validator_catches_understated_coercivity_constant() {
        let q = Potential::quartic_double_well();
        let p = Potential::from_parts(
            "quartic-understated",
            q.convex.clone(),
            q.smooth.clone(),
            1.0,
            0.1,
        );
        let report = validate_assumptions(&p, -10.0, 10.0, 40_001).unwrap();
        let coercivity = report.check("coercivity").unwrap();
        assert!(!coercivity.passed);
        // r^4 - r^2 bottoms out at r = +/- 1/sqrt(2)
        assert!(
            (coercivity.worst_r.abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-2,
            "worst point {} should be near +/-0.7071",
            coercivity.worst_r
        );
        assert!((coercivity.worst_value + 0.25).abs() < 1e-4);
        assert!(report.check("nonnegativity").unwrap().passed);
    }

    #[test]
    fn validator_catches_inconsistent_derivative_chain() {
        let convex = ScalarChain::new(
            Arc::new(|r: f64| 0.25 * r * r * r * r),
            Arc::new(|r: f64| r * r), // wrong: should be r^3
            Arc::new(|r: f64| 3.0 * r * r),
            Arc::new(|r: f64| 6.0 * r),
        );
        let smooth = ScalarChain::from_polynomial(&[0.0]).unwrap();
        let p = Potential::from_parts("broken-chain", convex, smooth, 1.0, 1.0);
        let report = validate_assumptions(&p, -2.0, 2.0, 500).unwrap();
        assert!(!report.check("derivative-consistency").unwrap().passed);
    }

    #[test]
    fn polynomial_quartic_matches_closed_form_split() {
        let p = Potential::from_polynomials(
            "poly-quartic",
            &[0.0, 0.0, 0.0, 0.0, 0.25],
            &[0.25, 0.0, -0.5],
        )
        .unwrap();
        let q = Potential::quartic_double_well();
        for r in [-3.0, -1.0, 0.0, 0.2, 1.0, 2.5] {
            assert!((p.well(r) - q.well(r)).abs() <= 1e-12 * (1.0 + q.well(r).abs()));
            assert!((p.well_d1(r) - q.well_d1(r)).abs() <= 1e-12 * (1.0 + q.well_d1(r).abs()));
            assert!((p.well_d2(r) - q.well_d2(r)).abs() <= 1e-12 * (1.0 + q.well_d2(r).abs()));
            assert!((p.well_d3(r) - q.well_d3(r)).abs() <= 1e-12 * (1.0 + q.well_d3(r).abs()));
        }
        // estimated constants are close to the tight ones, with headroom
        assert!(p.smooth_dd_bound() >= 1.0 && p.smooth_dd_bound() < 1.001);
        assert!(p.coercivity_constant() >= 0.25 && p.coercivity_constant() < 0.2501);
        let report = validate_assumptions(&p, -10.0, 10.0, 10_000).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn validator_rejects_bad_arguments() {
        let p = Potential::quartic_double_well();
        assert_eq!(
            validate_assumptions(&p, 1.0, -1.0, 500).unwrap_err(),
            PotentialError::BadInterval(1.0, -1.0)
        );
        assert_eq!(
            validate_assumptions(&p, -1.0, 1.0, 99).unwrap_err(),
            PotentialError::TooFewSamples(99)
        );
    }
}

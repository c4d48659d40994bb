//! The implicit time-discrete evolution and the verification of its
//! discrete estimates.
//!
//! Starting from `v_0`, every step minimizes the step objective with the
//! previous field as anchor, which makes the energy non-increasing and the
//! mean conserved by construction. The per-run record keeps enough to
//! re-check, after the fact, everything the construction promises: energy
//! monotonicity, the Hoelder-1/2 modulus in time, the dissipation budget,
//! and the stationarity-residual budget.

use thiserror::Error;

use crate::energy::EnergyAssembly;
use crate::grid::Field;
use crate::minimizer::{minimize_step, MinimizeConfig, MinimizeError};
use crate::potential::{validate_assumptions, AssumptionReport, Potential, PotentialError};

/// Snapshot of the evolution at one time level.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub n: usize,
    pub t: f64,
    pub v: Field,
    pub mu: Field,
    /// Mean of `well''(v) mu`, the discrete constraint multiplier.
    pub multiplier: f64,
    pub energy: f64,
    /// The conserved mean.
    pub alpha: f64,
    /// `||v_n - v_{n-1}||`, zero at n = 0.
    pub step_norm: f64,
    pub el_residual_norm: f64,
    pub inner_iters: usize,
    pub converged: bool,
}

/// One line of the run record; everything scalar, in step order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub t: f64,
    pub energy: f64,
    pub mean: f64,
    pub step_norm: f64,
    pub el_residual_norm: f64,
    pub inner_iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub tau: f64,
    pub e0: f64,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub trace: Trace,
    pub states: Vec<SchemeState>,
}

impl SchemeRun {
    /// Piecewise-constant-in-time evaluation, left-closed intervals.
    pub fn at_time(&self, t: f64) -> Result<&SchemeState, SchemeError> {
        evaluate_interpolant(&self.states, self.trace.tau, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnNonConverged {
    /// Stop the run; the estimates assume a successful descent per step.
    Abort,
    /// Record the failure in the trace and keep going.
    WarnContinue,
}

#[derive(Debug, Clone)]
pub struct SchemeOptions {
    pub minimize: MinimizeConfig,
    pub on_nonconverged: OnNonConverged,
    /// Sample count for the potential validation run() performs up front.
    pub validation_samples: usize,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions {
            minimize: MinimizeConfig::default(),
            on_nonconverged: OnNonConverged::Abort,
            validation_samples: 4001,
        }
    }
}

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("time step must lie in (0, 1), got {0}")]
    InvalidTimeStep(f64),
    #[error("final time must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("initial field contains non-finite values")]
    BadInitialField,
    #[error("potential failed its assumption checks:\n{0}")]
    PotentialRejected(Box<AssumptionReport>),
    #[error("potential validation could not run: {0}")]
    Potential(#[from] PotentialError),
    #[error("inner solve failed at step {step}: {source}")]
    Minimize {
        step: usize,
        source: MinimizeError,
    },
    #[error("inner solve did not converge at step {step}; partial trace retained")]
    NonConvergence { step: usize, partial: Box<SchemeRun> },
    #[error("invariant violated at step {step}: {what}")]
    InvariantViolated { step: usize, what: String },
    #[error("time {t} outside the computed range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("initial fields have different means: {a} vs {b}")]
    MeanMismatch { a: f64, b: f64 },
    #[error("refinement needs a strictly decreasing list of at least two time steps")]
    BadTauList,
}

/// Number of steps needed to reach `t_final`; the tiny nudge keeps exact
/// multiples from spilling into an extra step through roundoff.
pub fn step_count(t_final: f64, tau: f64) -> usize {
    ((t_final / tau - 1e-9).ceil() as usize).max(1)
}

/// Runs the scheme: `n = ceil(t_final/tau)` implicit steps from `v0`.
///
/// The potential must pass its assumption checks on `[-R, R]` with
/// `R = 10 (1 + max|v0|)` or the run refuses to start. Mean conservation,
/// the per-step energy inequality, and (at converged steps) the residual
/// bound are asserted online; a violation aborts with an error naming the
/// step, since the construction guarantees them.
pub fn run(
    v0: &Field,
    tau: f64,
    t_final: f64,
    p: &Potential,
    opts: &SchemeOptions,
) -> Result<SchemeRun, SchemeError> {
    if tau <= 0.0 || tau >= 1.0 || tau.is_nan() {
        return Err(SchemeError::InvalidTimeStep(tau));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(SchemeError::InvalidHorizon(t_final));
    }
    if !v0.is_finite() {
        return Err(SchemeError::BadInitialField);
    }

    let reach = 10.0 * (1.0 + v0.norm_inf());
    let report = validate_assumptions(p, -reach, reach, opts.validation_samples)?;
    if !report.passed() {
        return Err(SchemeError::PotentialRejected(Box::new(report)));
    }

    let alpha = v0.mean();
    let n_steps = step_count(t_final, tau);

    let assembly = EnergyAssembly::new(v0, p);
    let e0 = assembly.energy;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(SchemeState {
        n: 0,
        t: 0.0,
        v: v0.clone(),
        mu: assembly.mu,
        multiplier: assembly.multiplier,
        energy: e0,
        alpha,
        step_norm: 0.0,
        el_residual_norm: assembly.residual_norm,
        inner_iters: 0,
        converged: true,
    });

    for n in 0..n_steps {
        let step = n + 1;
        let prev = &states[n];
        let (w, rep) = minimize_step(&prev.v, tau, p, &opts.minimize)
            .map_err(|source| SchemeError::Minimize { step, source })?;

        if !rep.converged && opts.on_nonconverged == OnNonConverged::Abort {
            let partial = finish_run(tau, e0, states);
            return Err(SchemeError::NonConvergence {
                step,
                partial: Box::new(partial),
            });
        }

        let assembly = EnergyAssembly::new(&w, p);
        let step_norm = w.sub(&prev.v).norm_l2();
        let prev_energy = prev.energy;

        let mean_w = w.mean();
        if (mean_w - alpha).abs() > 1e-12 * (1.0 + alpha.abs()) {
            return Err(SchemeError::InvariantViolated {
                step,
                what: format!("mean drifted from {alpha} to {mean_w}"),
            });
        }

        // per-step energy inequality; the absolute floor covers the
        // regrouping roundoff of dividing the objective comparison by tau
        let slack = 10.0 * opts.minimize.tol_grad * step_norm + 1e-13 * (1.0 + prev_energy);
        let lhs = step_norm * step_norm / (2.0 * tau) + assembly.energy;
        if lhs > prev_energy + slack {
            return Err(SchemeError::InvariantViolated {
                step,
                what: format!(
                    "energy inequality failed: {lhs} > {prev_energy} + {slack}"
                ),
            });
        }

        if rep.converged {
            let bound = step_norm / tau + opts.minimize.tol_grad;
            let cushion = 1e-12 * (1.0 + step_norm / tau);
            if assembly.residual_norm > bound + cushion {
                return Err(SchemeError::InvariantViolated {
                    step,
                    what: format!(
                        "residual bound failed: {} > {bound}",
                        assembly.residual_norm
                    ),
                });
            }
        }

        states.push(SchemeState {
            n: step,
            t: step as f64 * tau,
            v: w,
            mu: assembly.mu,
            multiplier: assembly.multiplier,
            energy: assembly.energy,
            alpha,
            step_norm,
            el_residual_norm: assembly.residual_norm,
            inner_iters: rep.iters,
            converged: rep.converged,
        });
    }

    Ok(finish_run(tau, e0, states))
}

fn finish_run(tau: f64, e0: f64, states: Vec<SchemeState>) -> SchemeRun {
    let rows = states
        .iter()
        .map(|s| TraceRow {
            n: s.n,
            t: s.t,
            energy: s.energy,
            mean: s.v.mean(),
            step_norm: s.step_norm,
            el_residual_norm: s.el_residual_norm,
            inner_iters: s.inner_iters,
            converged: s.converged,
        })
        .collect();
    SchemeRun {
        trace: Trace { tau, e0, rows },
        states,
    }
}

/// State with `n = floor(t / tau)`, left-closed intervals. Times within
/// relative 1e-9 below a step boundary snap up to it, so exact multiples
/// survive the division.
pub fn evaluate_interpolant(
    states: &[SchemeState],
    tau: f64,
    t: f64,
) -> Result<&SchemeState, SchemeError> {
    let t_max = states.last().map(|s| s.t).unwrap_or(0.0);
    if t < 0.0 || t.is_nan() || t > t_max * (1.0 + 1e-12) + 1e-300 {
        return Err(SchemeError::TimeOutOfRange { t, t_max });
    }
    let ratio = t / tau;
    let mut n = ratio.floor();
    if (n + 1.0) - ratio <= 1e-9 * ratio.max(1.0) {
        n += 1.0;
    }
    let idx = (n as usize).min(states.len() - 1);
    Ok(&states[idx])
}

#[derive(Debug, Clone)]
pub struct EstimateCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest `lhs - rhs` seen; satisfied whenever `<= 0`.
    pub worst_excess: f64,
    pub worst_at: String,
    pub violations: usize,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub slack: f64,
    pub checks: Vec<EstimateCheck>,
}

impl EstimateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&EstimateCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{}: {} (worst excess {:.3e} at {}, {} violations) {}",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.worst_excess,
                    c.worst_at,
                    c.violations,
                    c.detail
                )
            })
            .collect()
    }
}

/// Gaps used for the pairwise checks: powers of two, so the pair grid
/// stays O(N log N).
fn dyadic_gaps(n_rows: usize) -> Vec<usize> {
    let mut gaps = Vec::new();
    let mut g = 1;
    while g < n_rows {
        gaps.push(g);
        g *= 2;
    }
    gaps
}

/// Re-verifies the discrete estimates of a completed (possibly partial)
/// run with a uniform slack of `10 tol_grad (1 + E(v0))`:
/// energy monotonicity over the dyadic pair grid, the Hoelder-1/2 bound
/// on the same pairs, and the running dissipation and residual budgets.
///
/// Scalar columns come from the trace; field differences come from the
/// states when available (pass `None` to fall back to the step-sum
/// majorant of the Hoelder bound, which is what the file-based checker
/// has to work with).
pub fn check_estimates(
    trace: &Trace,
    states: Option<&[SchemeState]>,
    tol_grad: f64,
) -> EstimateReport {
    let rows = &trace.rows;
    let e0 = trace.e0;
    let tau = trace.tau;
    let slack = 10.0 * tol_grad * (1.0 + e0);
    let mut checks = Vec::new();

    // (i) energy monotonicity on the dyadic pair grid plus against E(v0)
    {
        let mut worst = f64::NEG_INFINITY;
        let mut worst_at = String::from("-");
        let mut violations = 0;
        for gap in dyadic_gaps(rows.len()) {
            for n1 in 0..rows.len() - gap {
                let n2 = n1 + gap;
                let excess = rows[n2].energy - rows[n1].energy - slack;
                if excess > worst {
                    worst = excess;
                    worst_at = format!("(n1={n1}, n2={n2})");
                }
                if excess > 0.0 {
                    violations += 1;
                }
            }
        }
        for (n, row) in rows.iter().enumerate() {
            let excess = row.energy - e0 - slack;
            if excess > worst {
                worst = excess;
                worst_at = format!("(n={n} vs initial)");
            }
            if excess > 0.0 {
                violations += 1;
            }
        }
        checks.push(EstimateCheck {
            name: "energy-monotonicity",
            passed: violations == 0,
            worst_excess: worst,
            worst_at,
            violations,
            detail: String::new(),
        });
    }

    // (ii) Hoelder-1/2 continuity in time on the dyadic pair grid
    {
        let mut worst = f64::NEG_INFINITY;
        let mut worst_at = String::from("-");
        let mut violations = 0;
        let mut detail = String::new();
        match states {
            Some(states) => {
                for gap in dyadic_gaps(states.len()) {
                    for n1 in 0..states.len() - gap {
                        let n2 = n1 + gap;
                        let diff = states[n2].v.sub(&states[n1].v).norm_l2();
                        let dt = states[n2].t - states[n1].t;
                        let excess = diff * diff - 2.0 * e0 * (tau + dt) - slack;
                        if excess > worst {
                            worst = excess;
                            worst_at = format!("(n1={n1}, n2={n2})");
                        }
                        if excess > 0.0 {
                            violations += 1;
                        }
                    }
                }
            }
            None => {
                detail = String::from("[via step-sum majorant]");
                // ||v(t2)-v(t1)||^2 <= (n2-n1) * sum of squared increments
                let prefix: Vec<f64> = {
                    let mut acc = 0.0;
                    let mut v = vec![0.0];
                    for row in rows.iter().skip(1) {
                        acc += row.step_norm * row.step_norm;
                        v.push(acc);
                    }
                    v
                };
                for gap in dyadic_gaps(rows.len()) {
                    for n1 in 0..rows.len() - gap {
                        let n2 = n1 + gap;
                        let bound_sq = gap as f64 * (prefix[n2] - prefix[n1]);
                        let dt = rows[n2].t - rows[n1].t;
                        let excess = bound_sq - 2.0 * e0 * (tau + dt) - slack;
                        if excess > worst {
                            worst = excess;
                            worst_at = format!("(n1={n1}, n2={n2})");
                        }
                        if excess > 0.0 {
                            violations += 1;
                        }
                    }
                }
            }
        }
        checks.push(EstimateCheck {
            name: "holder-continuity",
            passed: violations == 0,
            worst_excess: worst,
            worst_at,
            violations,
            detail,
        });
    }

    // (iii) dissipation budget, running sums
    {
        let mut acc = 0.0;
        let mut worst = f64::NEG_INFINITY;
        let mut worst_at = String::from("-");
        let mut violations = 0;
        for row in rows.iter().skip(1) {
            acc += row.step_norm * row.step_norm / (2.0 * tau);
            let excess = acc - e0 - slack;
            if excess > worst {
                worst = excess;
                worst_at = format!("(through n={})", row.n);
            }
            if excess > 0.0 {
                violations += 1;
            }
        }
        checks.push(EstimateCheck {
            name: "dissipation-budget",
            passed: violations == 0,
            worst_excess: worst,
            worst_at,
            violations,
            detail: String::new(),
        });
    }

    // (iv) residual budget, running sums from n = 1
    {
        let mut acc = 0.0;
        let mut worst = f64::NEG_INFINITY;
        let mut worst_at = String::from("-");
        let mut violations = 0;
        for row in rows.iter().skip(1) {
            acc += tau * row.el_residual_norm * row.el_residual_norm;
            let excess = acc - 2.0 * e0 - slack;
            if excess > worst {
                worst = excess;
                worst_at = format!("(through n={})", row.n);
            }
            if excess > 0.0 {
                violations += 1;
            }
        }
        checks.push(EstimateCheck {
            name: "residual-budget",
            passed: violations == 0,
            worst_excess: worst,
            worst_at,
            violations,
            detail: String::new(),
        });
    }

    EstimateReport { slack, checks }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StabilityDiagnosis {
    WithinCap,
    Identical,
    /// Re-running at 100x tighter gradient tolerance brought the ratio
    /// under the cap: the blowup was solver noise, not the trajectories.
    SolverArtifact { retry_max_ratio: f64 },
    /// The divergence survives a tighter tolerance.
    Divergent { retry_max_ratio: f64 },
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub initial_distance: f64,
    pub final_distance: f64,
    pub max_ratio: f64,
    pub ratio_cap: f64,
    pub distances: Vec<f64>,
    pub passed: bool,
    pub diagnosis: StabilityDiagnosis,
}

/// Runs two trajectories from initial fields with the same mean and
/// compares their distance against the initial one. A ratio beyond the
/// cap triggers one retry at tighter tolerance to tell solver noise from
/// genuine divergence.
pub fn stability_experiment(
    v0_a: &Field,
    v0_b: &Field,
    tau: f64,
    t_final: f64,
    p: &Potential,
    opts: &SchemeOptions,
    ratio_cap: f64,
) -> Result<StabilityReport, SchemeError> {
    let (ma, mb) = (v0_a.mean(), v0_b.mean());
    if (ma - mb).abs() > 1e-12 * (1.0 + ma.abs()) {
        return Err(SchemeError::MeanMismatch { a: ma, b: mb });
    }

    let (distances, initial, fin, max_ratio) =
        run_pair_distances(v0_a, v0_b, tau, t_final, p, opts)?;

    if initial == 0.0 {
        // identical starts: determinism makes the trajectories bitwise equal
        let all_zero = distances.iter().all(|&d| d == 0.0);
        return Ok(StabilityReport {
            initial_distance: 0.0,
            final_distance: fin,
            max_ratio: 0.0,
            ratio_cap,
            distances,
            passed: all_zero,
            diagnosis: StabilityDiagnosis::Identical,
        });
    }

    if max_ratio <= ratio_cap {
        return Ok(StabilityReport {
            initial_distance: initial,
            final_distance: fin,
            max_ratio,
            ratio_cap,
            distances,
            passed: true,
            diagnosis: StabilityDiagnosis::WithinCap,
        });
    }

    // distinguish solver fault from genuine divergence
    let mut tighter = opts.clone();
    tighter.minimize.tol_grad = opts.minimize.tol_grad / 100.0;
    let (_, _, _, retry_max_ratio) = run_pair_distances(v0_a, v0_b, tau, t_final, p, &tighter)?;
    let diagnosis = if retry_max_ratio <= ratio_cap {
        StabilityDiagnosis::SolverArtifact { retry_max_ratio }
    } else {
        StabilityDiagnosis::Divergent { retry_max_ratio }
    };
    Ok(StabilityReport {
        initial_distance: initial,
        final_distance: fin,
        max_ratio,
        ratio_cap,
        distances,
        passed: false,
        diagnosis,
    })
}

fn run_pair_distances(
    v0_a: &Field,
    v0_b: &Field,
    tau: f64,
    t_final: f64,
    p: &Potential,
    opts: &SchemeOptions,
) -> Result<(Vec<f64>, f64, f64, f64), SchemeError> {
    let run_a = run(v0_a, tau, t_final, p, opts)?;
    let run_b = run(v0_b, tau, t_final, p, opts)?;
    let distances: Vec<f64> = run_a
        .states
        .iter()
        .zip(&run_b.states)
        .map(|(a, b)| a.v.sub(&b.v).norm_l2())
        .collect();
    let initial = distances[0];
    let fin = *distances.last().unwrap();
    let max_ratio = if initial > 0.0 {
        distances.iter().fold(0.0f64, |m, d| m.max(d / initial))
    } else {
        0.0
    };
    Ok((distances, initial, fin, max_ratio))
}

#[derive(Debug, Clone)]
pub struct PerturbationStudy {
    pub full: StabilityReport,
    pub half: StabilityReport,
    /// `final_distance(half) / final_distance(full)`; first-order
    /// stability puts this at 1/2.
    pub halving_ratio: f64,
    pub halving_ok: bool,
    pub passed: bool,
}

/// Full stability study: perturbs `v0` by the mean-zero part of
/// `perturbation`, runs the pair, then repeats with the perturbation
/// halved and checks that the final distance halves within 20%.
pub fn stability_study(
    v0: &Field,
    perturbation: &Field,
    tau: f64,
    t_final: f64,
    p: &Potential,
    opts: &SchemeOptions,
    ratio_cap: f64,
) -> Result<PerturbationStudy, SchemeError> {
    let delta = perturbation.project_mean_zero();
    let b_full = v0.add_scaled(&delta, 1.0);
    let b_half = v0.add_scaled(&delta, 0.5);

    let full = stability_experiment(v0, &b_full, tau, t_final, p, opts, ratio_cap)?;
    let half = stability_experiment(v0, &b_half, tau, t_final, p, opts, ratio_cap)?;

    let halving_ratio = if full.final_distance > 0.0 {
        half.final_distance / full.final_distance
    } else {
        f64::NAN
    };
    let halving_ok = (0.4..=0.6).contains(&halving_ratio);
    let passed = full.passed && half.passed && halving_ok;
    Ok(PerturbationStudy {
        full,
        half,
        halving_ratio,
        halving_ok,
        passed,
    })
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub taus: Vec<f64>,
    /// `deltas[i] = max_t ||v^{tau_i}(t) - v^{tau_{i+1}}(t)||`.
    pub deltas: Vec<f64>,
    pub monotone: bool,
    /// Least-squares slope of `log delta` against `log tau`; `None` when
    /// any delta vanishes (stationary data).
    pub fitted_exponent: Option<f64>,
    pub exponent_window: (f64, f64),
    pub passed: bool,
}

/// Time-step refinement study: runs the scheme for each step size in the
/// strictly decreasing list, measures the distance between consecutive
/// resolutions at the coarser run's times, and checks Cauchy behavior
/// (non-increasing deltas, fitted order within the window).
pub fn refinement_experiment(
    v0: &Field,
    tau_list: &[f64],
    t_final: f64,
    p: &Potential,
    opts: &SchemeOptions,
) -> Result<RefinementReport, SchemeError> {
    if tau_list.len() < 2 || tau_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SchemeError::BadTauList);
    }
    let runs: Vec<SchemeRun> = tau_list
        .iter()
        .map(|&tau| run(v0, tau, t_final, p, opts))
        .collect::<Result<_, _>>()?;

    let mut deltas = Vec::with_capacity(runs.len() - 1);
    for pair in runs.windows(2) {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let fine_t_max = fine.states.last().unwrap().t;
        let mut delta = 0.0f64;
        for state in &coarse.states {
            let t = state.t.min(fine_t_max);
            let other = fine.at_time(t)?;
            delta = delta.max(state.v.sub(&other.v).norm_l2());
        }
        deltas.push(delta);
    }

    let monotone = deltas
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0]));

    // a slope needs at least two positive points
    let fitted_exponent = if deltas.len() >= 2 && deltas.iter().all(|&d| d > 0.0) {
        Some(fit_log_slope(&tau_list[..deltas.len()], &deltas))
    } else {
        None
    };
    let exponent_window = (0.4, 1.5);
    let exponent_ok = fitted_exponent
        .map(|p| p >= exponent_window.0 && p <= exponent_window.1)
        .unwrap_or(true);

    Ok(RefinementReport {
        taus: tau_list.to_vec(),
        deltas,
        monotone,
        fitted_exponent,
        exponent_window,
        passed: monotone && exponent_ok,
    })
}

fn fit_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

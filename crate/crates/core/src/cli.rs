//! Command-line driver: run simulations, re-check traces, validate
//! potentials, and orchestrate the stability and refinement experiments.
//!
//! Exit codes: 0 when everything ran and every enabled check passed,
//! 1 for usage, configuration, or file problems, 2 when the run or any
//! verification check failed. Summaries go to stdout, problems to stderr,
//! and each command writes a flat `key=value` report file next to its
//! outputs.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{parse_config, RunConfig};
use crate::io::{
    initial_field, random_field, read_trace, write_snapshot, write_trace, FileError,
};
use crate::minimizer::MinimizeConfig;
use crate::potential::validate_assumptions;
use crate::scheme::{
    check_estimates, refinement_experiment, run as run_scheme, stability_study, EstimateReport,
    SchemeError, SchemeOptions, SchemeRun,
};

enum CliError {
    /// Wrong invocation, bad config, unreadable files: exit 1.
    Usage(String),
    /// The run or a verification check failed: exit 2.
    Failed(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failed(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) => m,
            CliError::Failed(m) => m,
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::Usage(e.to_string())
    }
}

const USAGE: &str = "usage:
  wflow run --config PATH [--output DIR]
  wflow check --trace PATH [--tol-grad X] [--output DIR]
  wflow validate-potential --config PATH [--output DIR]
  wflow stability --config PATH [--output DIR]
  wflow refine --config PATH [--output DIR]

Configs are 'key = value' files; see the project README for the grammar.";

/// Entry point behind `main`; returns the process exit code.
pub fn run_main(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wflow: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::Usage(USAGE.to_string()));
    };
    let flags = Flags::parse(&args[1..])?;
    match command.as_str() {
        "run" => cmd_run(&flags),
        "check" => cmd_check(&flags),
        "validate-potential" => cmd_validate_potential(&flags),
        "stability" => cmd_stability(&flags),
        "refine" => cmd_refine(&flags),
        other => Err(CliError::Usage(format!(
            "unknown command '{other}'\n{USAGE}"
        ))),
    }
}

struct Flags {
    config: Option<PathBuf>,
    output: Option<PathBuf>,
    trace: Option<PathBuf>,
    tol_grad: Option<f64>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Flags, CliError> {
        let mut flags = Flags {
            config: None,
            output: None,
            trace: None,
            tol_grad: None,
        };
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let mut value = || {
                it.next().cloned().ok_or_else(|| {
                    CliError::Usage(format!("flag '{flag}' needs a value\n{USAGE}"))
                })
            };
            match flag.as_str() {
                "--config" => flags.config = Some(PathBuf::from(value()?)),
                "--output" => flags.output = Some(PathBuf::from(value()?)),
                "--trace" => flags.trace = Some(PathBuf::from(value()?)),
                "--tol-grad" => {
                    let raw = value()?;
                    let parsed: f64 = raw.parse().map_err(|_| {
                        CliError::Usage(format!("--tol-grad needs a number, got '{raw}'"))
                    })?;
                    if parsed <= 0.0 || parsed.is_nan() {
                        return Err(CliError::Usage(
                            "--tol-grad must be positive".to_string(),
                        ));
                    }
                    flags.tol_grad = Some(parsed);
                }
                other => {
                    return Err(CliError::Usage(format!("unknown flag '{other}'\n{USAGE}")))
                }
            }
        }
        Ok(flags)
    }

    fn config(&self) -> Result<&Path, CliError> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--config is required\n{USAGE}")))
    }

    fn trace(&self) -> Result<&Path, CliError> {
        self.trace
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--trace is required\n{USAGE}")))
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|errors| {
        let mut msg = format!("{} has {} problem(s):", path.display(), errors.len());
        for e in errors {
            msg.push_str(&format!("\n  {e}"));
        }
        CliError::Usage(msg)
    })
}

/// Flat key=value report, written in insertion order so identical runs
/// produce identical bytes.
struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    fn new(command: &str) -> Report {
        Report {
            entries: vec![("command".to_string(), command.to_string())],
        }
    }

    fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(&format!("{k}={v}\n"));
        }
        let path = dir.join("report.txt");
        fs::write(&path, text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

fn scheme_options(cfg: &RunConfig) -> SchemeOptions {
    SchemeOptions {
        minimize: MinimizeConfig {
            tol_grad: cfg.tol_grad,
            max_iters: cfg.max_iters,
            ..MinimizeConfig::default()
        },
        on_nonconverged: cfg.on_nonconverged,
        validation_samples: cfg.validate_samples,
    }
}

fn out_dir(flags: &Flags, cfg: &RunConfig) -> PathBuf {
    flags
        .output
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone())
}

/// Converts a scheme failure into the right exit class; run-level
/// failures are verification failures (exit 2), anything that should
/// have been caught at parse time is a usage error.
fn scheme_failure(e: SchemeError) -> CliError {
    match e {
        SchemeError::InvalidTimeStep(_)
        | SchemeError::InvalidHorizon(_)
        | SchemeError::BadInitialField
        | SchemeError::BadTauList
        | SchemeError::Potential(_) => CliError::Usage(e.to_string()),
        other => CliError::Failed(other.to_string()),
    }
}

fn report_estimates(report: &EstimateReport, out: &mut Report) {
    out.set("check.slack", report.slack);
    for check in &report.checks {
        out.set(
            &format!("check.{}", check.name),
            if check.passed { "pass" } else { "fail" },
        );
        out.set(&format!("check.{}.worst_excess", check.name), check.worst_excess);
    }
}

fn print_estimates(report: &EstimateReport) {
    for line in report.summary_lines() {
        println!("  {line}");
    }
}

fn cmd_run(flags: &Flags) -> Result<(), CliError> {
    let config_path = flags.config()?;
    let cfg = load_config(config_path)?;
    let dir = out_dir(flags, &cfg);
    ensure_dir(&dir)?;

    let grid = cfg
        .build_grid()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let potential = cfg
        .build_potential()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let v0 = initial_field(&cfg.initial, &grid)?;
    let opts = scheme_options(&cfg);

    let mut report = Report::new("run");
    report.set("config", config_path.display());
    report.set("grid", format_cells(&cfg.cells));
    report.set("tau", cfg.tau);
    report.set("t_final", cfg.t_final);
    report.set("potential", potential.name());

    let outcome = run_scheme(&v0, cfg.tau, cfg.t_final, &potential, &opts);
    let sim = match outcome {
        Ok(sim) => sim,
        Err(SchemeError::NonConvergence { step, partial }) => {
            write_trace(&partial.trace, &dir.join("trace.csv"))?;
            report.set("result", "nonconverged");
            report.set("failed_step", step);
            report.write(&dir)?;
            return Err(CliError::Failed(format!(
                "inner solve did not converge at step {step}; partial trace written to {}",
                dir.join("trace.csv").display()
            )));
        }
        Err(e) => return Err(scheme_failure(e)),
    };

    write_trace(&sim.trace, &dir.join("trace.csv"))?;
    write_snapshots(&sim, &cfg, &dir)?;

    let estimates = check_estimates(&sim.trace, Some(&sim.states), cfg.tol_grad);
    let last = sim.trace.rows.last().unwrap();
    let mean_drift = sim
        .trace
        .rows
        .iter()
        .fold(0.0f64, |m, r| m.max((r.mean - sim.states[0].alpha).abs()));

    println!(
        "run: {} steps, tau = {}, energy {} -> {}, mean drift {:.3e}",
        sim.trace.rows.len() - 1,
        sim.trace.tau,
        sim.trace.e0,
        last.energy,
        mean_drift
    );
    print_estimates(&estimates);

    report.set("steps", sim.trace.rows.len() - 1);
    report.set("energy.initial", sim.trace.e0);
    report.set("energy.final", last.energy);
    report.set("mean.initial", sim.trace.rows[0].mean);
    report.set("mean.drift_max", mean_drift);
    report_estimates(&estimates, &mut report);
    report.set("result", if estimates.passed() { "pass" } else { "fail" });
    report.write(&dir)?;

    if estimates.passed() {
        println!("result: pass (outputs in {})", dir.display());
        Ok(())
    } else {
        let failed: Vec<&str> = estimates
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        Err(CliError::Failed(format!(
            "estimate check(s) failed: {}",
            failed.join(", ")
        )))
    }
}

fn write_snapshots(sim: &SchemeRun, cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    if !cfg.write_fields {
        return Ok(());
    }
    let last = sim.states.len() - 1;
    for state in &sim.states {
        let due = state.n == 0
            || state.n == last
            || (cfg.snapshot_every > 0 && state.n % cfg.snapshot_every == 0);
        if due {
            let path = dir.join(format!("snapshot_{:06}.csv", state.n));
            write_snapshot(state, &path)?;
        }
    }
    Ok(())
}

fn cmd_check(flags: &Flags) -> Result<(), CliError> {
    let trace_path = flags.trace()?;
    let tol_grad = flags.tol_grad.unwrap_or(1e-8);
    let trace = read_trace(trace_path)?;
    let estimates = check_estimates(&trace, None, tol_grad);

    println!(
        "check: {} rows, tau = {}, initial energy {}",
        trace.rows.len(),
        trace.tau,
        trace.e0
    );
    print_estimates(&estimates);

    if let Some(dir) = &flags.output {
        ensure_dir(dir)?;
        let mut report = Report::new("check");
        report.set("trace", trace_path.display());
        report.set("rows", trace.rows.len());
        report.set("tau", trace.tau);
        report_estimates(&estimates, &mut report);
        report.set("result", if estimates.passed() { "pass" } else { "fail" });
        report.write(dir)?;
    }

    if estimates.passed() {
        println!("result: pass");
        Ok(())
    } else {
        let failed: Vec<&str> = estimates
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        Err(CliError::Failed(format!(
            "estimate check(s) failed: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_validate_potential(flags: &Flags) -> Result<(), CliError> {
    let config_path = flags.config()?;
    let cfg = load_config(config_path)?;
    let potential = cfg
        .build_potential()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = validate_assumptions(
        &potential,
        cfg.validate_rmin,
        cfg.validate_rmax,
        cfg.validate_samples,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    print!("{report}");

    if let Some(dir) = &flags.output {
        ensure_dir(dir)?;
        let mut out = Report::new("validate-potential");
        out.set("config", config_path.display());
        out.set("potential", potential.name());
        out.set("interval", format!("[{}, {}]", report.r_min, report.r_max));
        out.set("samples", report.samples);
        for check in &report.checks {
            out.set(
                &format!("assumption.{}", check.name),
                if check.passed { "pass" } else { "fail" },
            );
        }
        out.set("result", if report.passed() { "pass" } else { "fail" });
        out.write(dir)?;
    }

    if report.passed() {
        println!("result: pass");
        Ok(())
    } else {
        Err(CliError::Failed(
            "potential failed its assumption checks".to_string(),
        ))
    }
}

fn cmd_stability(flags: &Flags) -> Result<(), CliError> {
    let config_path = flags.config()?;
    let cfg = load_config(config_path)?;
    let dir = out_dir(flags, &cfg);
    ensure_dir(&dir)?;

    let grid = cfg
        .build_grid()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let potential = cfg
        .build_potential()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let v0 = initial_field(&cfg.initial, &grid)?;
    let perturbation = random_field(&grid, cfg.perturb_seed, cfg.perturb_amplitude, 0.0);
    let opts = scheme_options(&cfg);

    let study = stability_study(
        &v0,
        &perturbation,
        cfg.tau,
        cfg.t_final,
        &potential,
        &opts,
        cfg.stability_cap,
    )
    .map_err(scheme_failure)?;

    // distance table for both perturbation sizes
    let mut table = String::from("n,t,dist_full,dist_half\n");
    for (n, (df, dh)) in study
        .full
        .distances
        .iter()
        .zip(&study.half.distances)
        .enumerate()
    {
        table.push_str(&format!("{n},{},{df},{dh}\n", n as f64 * cfg.tau));
    }
    let table_path = dir.join("stability.csv");
    fs::write(&table_path, table)
        .map_err(|e| CliError::Usage(format!("{}: {e}", table_path.display())))?;

    println!(
        "stability: perturbation {:.3e}, max ratio {:.4} (cap {}), halving ratio {:.4}",
        study.full.initial_distance,
        study.full.max_ratio,
        study.full.ratio_cap,
        study.halving_ratio
    );
    println!("  diagnosis: {:?}", study.full.diagnosis);

    let mut report = Report::new("stability");
    report.set("config", config_path.display());
    report.set("tau", cfg.tau);
    report.set("t_final", cfg.t_final);
    report.set("perturb_seed", cfg.perturb_seed);
    report.set("perturb_amplitude", cfg.perturb_amplitude);
    report.set("initial_distance", study.full.initial_distance);
    report.set("final_distance", study.full.final_distance);
    report.set("max_ratio", study.full.max_ratio);
    report.set("ratio_cap", study.full.ratio_cap);
    report.set("halving_ratio", study.halving_ratio);
    report.set(
        "halving_ok",
        if study.halving_ok { "pass" } else { "fail" },
    );
    report.set("result", if study.passed { "pass" } else { "fail" });
    report.write(&dir)?;

    if study.passed {
        println!("result: pass (distance table in {})", table_path.display());
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "stability experiment failed (max ratio {:.4}, halving ratio {:.4}, diagnosis {:?})",
            study.full.max_ratio, study.halving_ratio, study.full.diagnosis
        )))
    }
}

fn cmd_refine(flags: &Flags) -> Result<(), CliError> {
    let config_path = flags.config()?;
    let cfg = load_config(config_path)?;
    let dir = out_dir(flags, &cfg);
    ensure_dir(&dir)?;

    let grid = cfg
        .build_grid()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let potential = cfg
        .build_potential()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let v0 = initial_field(&cfg.initial, &grid)?;
    let opts = scheme_options(&cfg);

    let report = refinement_experiment(&v0, &cfg.tau_list, cfg.t_final, &potential, &opts)
        .map_err(scheme_failure)?;

    let mut table = String::from("tau,delta\n");
    for (tau, delta) in report.taus.iter().zip(&report.deltas) {
        table.push_str(&format!("{tau},{delta}\n"));
    }
    let table_path = dir.join("deltas.csv");
    fs::write(&table_path, table)
        .map_err(|e| CliError::Usage(format!("{}: {e}", table_path.display())))?;

    println!("refine: taus {:?}", report.taus);
    println!("  deltas {:?}", report.deltas);
    match report.fitted_exponent {
        Some(p) => println!(
            "  fitted order {:.3} (window [{}, {}])",
            p, report.exponent_window.0, report.exponent_window.1
        ),
        None => println!("  fitted order undefined (stationary data)"),
    }

    let mut out = Report::new("refine");
    out.set("config", config_path.display());
    out.set("t_final", cfg.t_final);
    for (i, (tau, delta)) in report.taus.iter().zip(&report.deltas).enumerate() {
        out.set(&format!("delta.{i}.tau"), tau);
        out.set(&format!("delta.{i}.value"), delta);
    }
    out.set("monotone", if report.monotone { "pass" } else { "fail" });
    match report.fitted_exponent {
        Some(p) => out.set("fitted_exponent", p),
        None => out.set("fitted_exponent", "undefined"),
    }
    out.set("result", if report.passed { "pass" } else { "fail" });
    out.write(&dir)?;

    if report.passed {
        println!("result: pass (delta table in {})", table_path.display());
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "refinement experiment failed (deltas {:?}, fitted order {:?})",
            report.deltas, report.fitted_exponent
        )))
    }
}

fn format_cells(cells: &[usize]) -> String {
    cells
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

//! Plain `key = value` run configuration.
//!
//! The format is line-oriented UTF-8: `#` starts a comment, blank lines
//! are skipped, keys are lowercase, unknown or duplicate keys are errors.
//! Parsing collects every problem with its line number instead of
//! stopping at the first one, and re-validates the numeric constraints of
//! the modules that will consume the values, so a config that parses is a
//! config that runs.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use crate::grid::{Grid, GridError};
use crate::potential::{Potential, PotentialError};
use crate::scheme::OnNonConverged;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line number; `None` for file-level problems such as
    /// missing required keys.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Quartic,
    Polynomial { convex: Vec<f64>, smooth: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Constant(f64),
    /// `amplitude * prod_axis cos(pi * mode * x_axis / L_axis)`.
    Cosine { amplitude: f64, mode: usize },
    /// Seeded uniform noise, re-centered to the requested mean; the
    /// generator is ChaCha8 so traces reproduce across platforms.
    Random { seed: u64, amplitude: f64, mean: f64 },
    /// The `v` column of a snapshot file on a matching grid.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMode {
    Flow,
    Stability,
    Refinement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub tau: f64,
    pub t_final: f64,
    pub potential: PotentialSpec,
    pub initial: InitialSpec,
    pub tol_grad: f64,
    pub max_iters: usize,
    pub output_dir: PathBuf,
    /// Write a field snapshot every this many steps (0 disables); the
    /// initial and final states are always included when enabled.
    pub snapshot_every: usize,
    pub write_fields: bool,
    pub mode: ExperimentMode,
    pub perturb_seed: u64,
    pub perturb_amplitude: f64,
    pub stability_cap: f64,
    pub tau_list: Vec<f64>,
    pub on_nonconverged: OnNonConverged,
    pub validate_rmin: f64,
    pub validate_rmax: f64,
    pub validate_samples: usize,
}

const KNOWN_KEYS: &[&str] = &[
    "dim",
    "nx",
    "ny",
    "nz",
    "length",
    "lx",
    "ly",
    "lz",
    "tau",
    "t_final",
    "potential",
    "convex_coeffs",
    "smooth_coeffs",
    "initial",
    "tol_grad",
    "max_iters",
    "output_dir",
    "snapshot_every",
    "write_fields",
    "mode",
    "perturb_seed",
    "perturb_amplitude",
    "stability_cap",
    "tau_list",
    "on_nonconverged",
    "validate_rmin",
    "validate_rmax",
    "validate_samples",
];

struct Raw {
    map: HashMap<String, (usize, String)>,
    errors: Vec<ConfigError>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<&(usize, String)> {
        self.map.get(key)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let mut raw = Raw {
        map: HashMap::new(),
        errors: Vec::new(),
    };

    for (idx, line_text) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match line_text.find('#') {
            Some(pos) => &line_text[..pos],
            None => line_text,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let Some(eq) = stripped.find('=') else {
            raw.errors.push(ConfigError {
                line: Some(line),
                message: format!("expected 'key = value', got '{stripped}'"),
            });
            continue;
        };
        let key = stripped[..eq].trim().to_string();
        let value = stripped[eq + 1..].trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            raw.errors.push(ConfigError {
                line: Some(line),
                message: format!("unknown key '{key}'"),
            });
            continue;
        }
        if raw.map.contains_key(&key) {
            raw.errors.push(ConfigError {
                line: Some(line),
                message: format!("duplicate key '{key}'"),
            });
            continue;
        }
        raw.map.insert(key, (line, value));
    }

    let mut errors = std::mem::take(&mut raw.errors);
    let config = extract(&raw, &mut errors);
    match config {
        Some(config) if errors.is_empty() => Ok(config),
        _ => Err(errors),
    }
}

fn extract(raw: &Raw, errors: &mut Vec<ConfigError>) -> Option<RunConfig> {
    let dim = required(raw, errors, "dim", parse_usize)?;
    if !(1..=3).contains(&dim) {
        errors.push(keyed_error(raw, "dim", "dim must be 1, 2, or 3"));
        return None;
    }

    let mut cells = Vec::new();
    for (axis, key) in ["nx", "ny", "nz"].iter().take(dim).enumerate() {
        match required(raw, errors, key, parse_usize) {
            Some(n) if n >= 3 => cells.push(n),
            Some(n) => {
                errors.push(keyed_error(
                    raw,
                    key,
                    &format!("axis {axis} needs at least 3 cells (got {n})"),
                ));
            }
            None => {}
        }
    }

    let fallback_length = optional(raw, errors, "length", parse_f64);
    let mut lengths = Vec::new();
    for key in ["lx", "ly", "lz"].iter().take(dim) {
        let value = match optional(raw, errors, key, parse_f64) {
            Some(v) => Some(v),
            None => fallback_length,
        };
        match value {
            Some(l) if l.is_finite() && l > 0.0 => lengths.push(l),
            Some(l) => errors.push(keyed_error(
                raw,
                key,
                &format!("length must be positive and finite (got {l})"),
            )),
            None => errors.push(ConfigError {
                line: None,
                message: format!("missing length for axis '{key}' (set '{key}' or 'length')"),
            }),
        }
    }

    let tau = required(raw, errors, "tau", parse_f64);
    if let Some(tau) = tau {
        if !(tau > 0.0 && tau < 1.0) {
            errors.push(keyed_error(raw, "tau", "tau must be positive and < 1"));
        }
    }

    let t_final = required(raw, errors, "t_final", parse_f64);
    if let Some(t) = t_final {
        if !(t > 0.0 && t.is_finite()) {
            errors.push(keyed_error(
                raw,
                "t_final",
                "t_final must be positive and finite",
            ));
        }
    }

    let potential = parse_potential(raw, errors);
    let initial = parse_initial(raw, errors);

    let tol_grad = optional(raw, errors, "tol_grad", parse_f64).unwrap_or(1e-8);
    if tol_grad <= 0.0 || tol_grad.is_nan() {
        errors.push(keyed_error(raw, "tol_grad", "tol_grad must be positive"));
    }
    let max_iters = optional(raw, errors, "max_iters", parse_usize).unwrap_or(5000);
    if max_iters == 0 {
        errors.push(keyed_error(raw, "max_iters", "max_iters must be at least 1"));
    }

    let output_dir = raw
        .get("output_dir")
        .map(|(_, v)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from("out"));
    let snapshot_every = optional(raw, errors, "snapshot_every", parse_usize).unwrap_or(0);
    let write_fields = optional(raw, errors, "write_fields", parse_bool).unwrap_or(false);

    let mode = match raw.get("mode") {
        None => ExperimentMode::Flow,
        Some((line, v)) => match v.as_str() {
            "flow" => ExperimentMode::Flow,
            "stability" => ExperimentMode::Stability,
            "refinement" => ExperimentMode::Refinement,
            other => {
                errors.push(ConfigError {
                    line: Some(*line),
                    message: format!(
                        "mode must be flow, stability, or refinement (got '{other}')"
                    ),
                });
                ExperimentMode::Flow
            }
        },
    };

    let perturb_seed = optional(raw, errors, "perturb_seed", parse_u64).unwrap_or(1);
    let perturb_amplitude =
        optional(raw, errors, "perturb_amplitude", parse_f64).unwrap_or(1e-4);
    if !(perturb_amplitude > 0.0 && perturb_amplitude.is_finite()) {
        errors.push(keyed_error(
            raw,
            "perturb_amplitude",
            "perturb_amplitude must be positive and finite",
        ));
    }
    let stability_cap = optional(raw, errors, "stability_cap", parse_f64).unwrap_or(1e3);
    if stability_cap <= 0.0 || stability_cap.is_nan() {
        errors.push(keyed_error(
            raw,
            "stability_cap",
            "stability_cap must be positive",
        ));
    }

    let tau_list = match raw.get("tau_list") {
        None => vec![4e-3, 2e-3, 1e-3, 5e-4],
        Some((line, v)) => match parse_f64_list(v) {
            Ok(list) => {
                let ok = list.len() >= 2
                    && list.iter().all(|&t| t > 0.0 && t < 1.0)
                    && list.windows(2).all(|w| w[1] < w[0]);
                if !ok {
                    errors.push(ConfigError {
                        line: Some(*line),
                        message:
                            "tau_list must be a strictly decreasing list of at least two steps in (0, 1)"
                                .to_string(),
                    });
                }
                list
            }
            Err(msg) => {
                errors.push(ConfigError {
                    line: Some(*line),
                    message: msg,
                });
                Vec::new()
            }
        },
    };

    let on_nonconverged = match raw.get("on_nonconverged") {
        None => OnNonConverged::Abort,
        Some((line, v)) => match v.as_str() {
            "abort" => OnNonConverged::Abort,
            "warn-continue" => OnNonConverged::WarnContinue,
            other => {
                errors.push(ConfigError {
                    line: Some(*line),
                    message: format!(
                        "on_nonconverged must be abort or warn-continue (got '{other}')"
                    ),
                });
                OnNonConverged::Abort
            }
        },
    };

    let validate_rmin = optional(raw, errors, "validate_rmin", parse_f64).unwrap_or(-10.0);
    let validate_rmax = optional(raw, errors, "validate_rmax", parse_f64).unwrap_or(10.0);
    if validate_rmin >= validate_rmax {
        errors.push(ConfigError {
            line: None,
            message: "validate_rmin must be below validate_rmax".to_string(),
        });
    }
    let validate_samples = optional(raw, errors, "validate_samples", parse_usize).unwrap_or(10_001);
    if validate_samples < 100 {
        errors.push(keyed_error(
            raw,
            "validate_samples",
            "validate_samples must be at least 100",
        ));
    }

    if !errors.is_empty() {
        return None;
    }

    Some(RunConfig {
        cells,
        lengths,
        tau: tau?,
        t_final: t_final?,
        potential: potential?,
        initial: initial?,
        tol_grad,
        max_iters,
        output_dir,
        snapshot_every,
        write_fields,
        mode,
        perturb_seed,
        perturb_amplitude,
        stability_cap,
        tau_list,
        on_nonconverged,
        validate_rmin,
        validate_rmax,
        validate_samples,
    })
}

impl RunConfig {
    pub fn build_grid(&self) -> Result<Arc<Grid>, GridError> {
        Grid::shared(&self.cells, &self.lengths)
    }

    pub fn build_potential(&self) -> Result<Potential, PotentialError> {
        match &self.potential {
            PotentialSpec::Quartic => Ok(Potential::quartic_double_well()),
            PotentialSpec::Polynomial { convex, smooth } => {
                Potential::from_polynomials("polynomial", convex, smooth)
            }
        }
    }
}

fn parse_potential(raw: &Raw, errors: &mut Vec<ConfigError>) -> Option<PotentialSpec> {
    let (line, kind) = match raw.get("potential") {
        Some((line, v)) => (*line, v.clone()),
        None => {
            errors.push(ConfigError {
                line: None,
                message: "missing required key 'potential'".to_string(),
            });
            return None;
        }
    };
    match kind.as_str() {
        "quartic" => Some(PotentialSpec::Quartic),
        "polynomial" => {
            let convex = required_list(raw, errors, "convex_coeffs")?;
            let smooth = required_list(raw, errors, "smooth_coeffs")?;
            Some(PotentialSpec::Polynomial { convex, smooth })
        }
        other => {
            errors.push(ConfigError {
                line: Some(line),
                message: format!("potential must be quartic or polynomial (got '{other}')"),
            });
            None
        }
    }
}

fn parse_initial(raw: &Raw, errors: &mut Vec<ConfigError>) -> Option<InitialSpec> {
    let (line, value) = match raw.get("initial") {
        Some((line, v)) => (*line, v.clone()),
        None => {
            errors.push(ConfigError {
                line: None,
                message: "missing required key 'initial'".to_string(),
            });
            return None;
        }
    };
    let fail = |errors: &mut Vec<ConfigError>, msg: String| {
        errors.push(ConfigError {
            line: Some(line),
            message: msg,
        });
        None
    };
    let (kind, params) = match value.split_once(':') {
        Some((k, p)) => (k.trim(), p.trim()),
        None => (value.as_str(), ""),
    };
    match kind {
        "constant" => match params.parse::<f64>() {
            Ok(c) if c.is_finite() => Some(InitialSpec::Constant(c)),
            _ => fail(
                errors,
                format!("initial constant needs one finite value (got '{params}')"),
            ),
        },
        "cosine" => {
            let parts: Vec<&str> = params.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return fail(
                    errors,
                    "initial cosine needs 'cosine:<amplitude>,<mode>'".to_string(),
                );
            }
            match (parts[0].parse::<f64>(), parts[1].parse::<usize>()) {
                (Ok(a), Ok(k)) if a.is_finite() => {
                    Some(InitialSpec::Cosine { amplitude: a, mode: k })
                }
                _ => fail(
                    errors,
                    format!("could not parse cosine parameters '{params}'"),
                ),
            }
        }
        "random" => {
            let parts: Vec<&str> = params.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return fail(
                    errors,
                    "initial random needs 'random:<seed>,<amplitude>,<mean>'".to_string(),
                );
            }
            match (
                parts[0].parse::<u64>(),
                parts[1].parse::<f64>(),
                parts[2].parse::<f64>(),
            ) {
                (Ok(seed), Ok(amplitude), Ok(mean))
                    if amplitude.is_finite() && mean.is_finite() =>
                {
                    Some(InitialSpec::Random {
                        seed,
                        amplitude,
                        mean,
                    })
                }
                _ => fail(
                    errors,
                    format!("could not parse random parameters '{params}'"),
                ),
            }
        }
        "file" => {
            if params.is_empty() {
                fail(errors, "initial file needs 'file:<path>'".to_string())
            } else {
                Some(InitialSpec::File(PathBuf::from(params)))
            }
        }
        other => fail(
            errors,
            format!("initial must be constant, cosine, random, or file (got '{other}')"),
        ),
    }
}

fn keyed_error(raw: &Raw, key: &str, message: &str) -> ConfigError {
    ConfigError {
        line: raw.get(key).map(|(line, _)| *line),
        message: message.to_string(),
    }
}

fn required<T>(
    raw: &Raw,
    errors: &mut Vec<ConfigError>,
    key: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Option<T> {
    match raw.get(key) {
        None => {
            errors.push(ConfigError {
                line: None,
                message: format!("missing required key '{key}'"),
            });
            None
        }
        Some((line, v)) => match parse(v) {
            Ok(t) => Some(t),
            Err(msg) => {
                errors.push(ConfigError {
                    line: Some(*line),
                    message: format!("{key}: {msg}"),
                });
                None
            }
        },
    }
}

fn optional<T>(
    raw: &Raw,
    errors: &mut Vec<ConfigError>,
    key: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Option<T> {
    match raw.get(key) {
        None => None,
        Some((line, v)) => match parse(v) {
            Ok(t) => Some(t),
            Err(msg) => {
                errors.push(ConfigError {
                    line: Some(*line),
                    message: format!("{key}: {msg}"),
                });
                None
            }
        },
    }
}

fn required_list(raw: &Raw, errors: &mut Vec<ConfigError>, key: &str) -> Option<Vec<f64>> {
    match raw.get(key) {
        None => {
            errors.push(ConfigError {
                line: None,
                message: format!("polynomial potential needs '{key}'"),
            });
            None
        }
        Some((line, v)) => match parse_f64_list(v) {
            Ok(list) => Some(list),
            Err(msg) => {
                errors.push(ConfigError {
                    line: Some(*line),
                    message: format!("{key}: {msg}"),
                });
                None
            }
        },
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .map_err(|_| format!("expected a number, got '{s}'"))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("expected a finite number, got '{s}'"))
            }
        })
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse::<usize>()
        .map_err(|_| format!("expected a nonnegative integer, got '{s}'"))
}

fn parse_u64(s: &str) -> Result<u64, String> {
    s.parse::<u64>()
        .map_err(|_| format!("expected a nonnegative integer, got '{s}'"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|part| parse_f64(part.trim()))
        .collect::<Result<Vec<f64>, String>>()
        .and_then(|list| {
            if list.is_empty() {
                Err("expected a comma-separated list of numbers".to_string())
            } else {
                Ok(list)
            }
        })
}

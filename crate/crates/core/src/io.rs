//! Trace and snapshot files, and the initial fields built from a config.
//!
//! Floats are serialized with the shortest decimal that round-trips to
//! the same bits, so a snapshot feeds back into a run without any loss
//! and identical runs produce byte-identical files. Writes go through a
//! temporary file in the same directory followed by a rename.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::InitialSpec;
use crate::grid::{Field, Grid};
use crate::scheme::{SchemeState, Trace, TraceRow};

pub const TRACE_HEADER: &str = "n,t,energy,mean,step_l2,el_residual,inner_iters,converged";

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: initial field has {got} values but the grid has {expected} cells")]
    GridShape {
        path: PathBuf,
        got: usize,
        expected: usize,
    },
    #[error("{path}: {message}")]
    Content { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `content` atomically: temporary file next to the target, then
/// rename.
fn write_atomic(path: &Path, content: &str) -> Result<(), FileError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut writer = BufWriter::new(file);
        writer.write_all(content.as_bytes()).map_err(io_err(&tmp))?;
        writer.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), FileError> {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.n,
            row.t,
            row.energy,
            row.mean,
            row.step_norm,
            row.el_residual_norm,
            row.inner_iters,
            row.converged
        ));
    }
    write_atomic(path, &out)
}

pub fn read_trace(path: &Path) -> Result<Trace, FileError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TRACE_HEADER => {}
        Some((_, header)) => {
            return Err(FileError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("unexpected header '{header}'"),
            })
        }
        None => {
            return Err(FileError::Content {
                path: path.to_path_buf(),
                message: "empty trace file".to_string(),
            })
        }
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(FileError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 8 columns, got {}", parts.len()),
            });
        }
        let parse_err = |message: String| FileError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let row = TraceRow {
            n: parts[0]
                .parse()
                .map_err(|_| parse_err(format!("bad step index '{}'", parts[0])))?,
            t: parts[1]
                .parse()
                .map_err(|_| parse_err(format!("bad time '{}'", parts[1])))?,
            energy: parts[2]
                .parse()
                .map_err(|_| parse_err(format!("bad energy '{}'", parts[2])))?,
            mean: parts[3]
                .parse()
                .map_err(|_| parse_err(format!("bad mean '{}'", parts[3])))?,
            step_norm: parts[4]
                .parse()
                .map_err(|_| parse_err(format!("bad step norm '{}'", parts[4])))?,
            el_residual_norm: parts[5]
                .parse()
                .map_err(|_| parse_err(format!("bad residual norm '{}'", parts[5])))?,
            inner_iters: parts[6]
                .parse()
                .map_err(|_| parse_err(format!("bad iteration count '{}'", parts[6])))?,
            converged: match parts[7].trim() {
                "true" => true,
                "false" => false,
                other => return Err(parse_err(format!("bad converged flag '{other}'"))),
            },
        };
        rows.push(row);
    }

    if rows.len() < 2 {
        return Err(FileError::Content {
            path: path.to_path_buf(),
            message: "trace needs at least the initial state and one step".to_string(),
        });
    }
    let tau = rows[1].t - rows[0].t;
    if tau <= 0.0 || tau.is_nan() {
        return Err(FileError::Content {
            path: path.to_path_buf(),
            message: format!("times do not advance (first step gives tau = {tau})"),
        });
    }
    Ok(Trace {
        tau,
        e0: rows[0].energy,
        rows,
    })
}

/// Snapshot columns: `x,v,mu` in 1D, `i,j,x,y,v,mu` in 2D, and
/// `i,j,k,x,y,z,v,mu` in 3D, all in row-major cell order.
pub fn write_snapshot(state: &SchemeState, path: &Path) -> Result<(), FileError> {
    let grid = state.v.grid();
    let dim = grid.dim();
    let mut out = String::new();
    match dim {
        1 => out.push_str("x,v,mu\n"),
        2 => out.push_str("i,j,x,y,v,mu\n"),
        _ => out.push_str("i,j,k,x,y,z,v,mu\n"),
    }
    for idx in 0..grid.total_cells() {
        let mi = grid.unflatten(idx);
        if dim > 1 {
            for i in &mi {
                out.push_str(&format!("{i},"));
            }
        }
        for (axis, &i) in mi.iter().enumerate() {
            out.push_str(&format!("{},", grid.cell_center(axis, i)));
        }
        out.push_str(&format!(
            "{},{}\n",
            state.v.values()[idx],
            state.mu.values()[idx]
        ));
    }
    write_atomic(path, &out)
}

/// Reads the `v` column of a snapshot written by [`write_snapshot`].
pub fn read_snapshot_values(path: &Path) -> Result<Vec<f64>, FileError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    let v_column = match lines.next() {
        Some((_, header)) => {
            let columns: Vec<&str> = header.trim().split(',').collect();
            match columns.iter().position(|&c| c == "v") {
                Some(pos) => pos,
                None => {
                    return Err(FileError::Parse {
                        path: path.to_path_buf(),
                        line: 1,
                        message: format!("no 'v' column in header '{header}'"),
                    })
                }
            }
        }
        None => {
            return Err(FileError::Content {
                path: path.to_path_buf(),
                message: "empty snapshot file".to_string(),
            })
        }
    };

    let mut values = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let cell = parts.get(v_column).ok_or_else(|| FileError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: "row is missing the 'v' column".to_string(),
        })?;
        let value: f64 = cell.parse().map_err(|_| FileError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("bad field value '{cell}'"),
        })?;
        values.push(value);
    }
    Ok(values)
}

/// Materializes the configured initial condition on `grid`.
pub fn initial_field(spec: &InitialSpec, grid: &Arc<Grid>) -> Result<Field, FileError> {
    match spec {
        InitialSpec::Constant(c) => Ok(Field::constant(grid, *c)),
        InitialSpec::Cosine { amplitude, mode } => {
            let k = *mode as f64;
            let lengths = grid.lengths().to_vec();
            let a = *amplitude;
            Ok(Field::from_fn(grid, move |coords| {
                let mut value = a;
                for (axis, &x) in coords.iter().enumerate() {
                    value *= (std::f64::consts::PI * k * x / lengths[axis]).cos();
                }
                value
            }))
        }
        InitialSpec::Random {
            seed,
            amplitude,
            mean,
        } => Ok(random_field(grid, *seed, *amplitude, *mean)),
        InitialSpec::File(path) => {
            let values = read_snapshot_values(path)?;
            if values.len() != grid.total_cells() {
                return Err(FileError::GridShape {
                    path: path.clone(),
                    got: values.len(),
                    expected: grid.total_cells(),
                });
            }
            Field::new(grid, values).map_err(|e| FileError::Content {
                path: path.clone(),
                message: e.to_string(),
            })
        }
    }
}

/// Seeded uniform noise in [-1, 1) per cell (row-major order, ChaCha8),
/// projected to mean zero, scaled, and shifted to the requested mean.
pub fn random_field(grid: &Arc<Grid>, seed: u64, amplitude: f64, mean: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..grid.total_cells())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Field::from_raw(grid, raw)
        .project_mean_zero()
        .map(|v| amplitude * v)
        .add_constant(mean)
}

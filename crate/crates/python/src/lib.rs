//! Python bindings: parse configs, solve, run harness subcommands.

use std::path::PathBuf;

use mfbsde::dsl;
use mfbsde::harness::{self, ExperimentConfig, Overrides, Subcommand};
use mfbsde::meanfield_bsde::{picard_solve, solve_markovian, PicardOptions, Variant};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn subcommand(name: &str) -> PyResult<Subcommand> {
    Ok(match name {
        "solve" => Subcommand::Solve,
        "picard" => Subcommand::Picard,
        "verify" => Subcommand::Verify,
        "compare" => Subcommand::Compare,
        "converge" => Subcommand::Converge,
        "oracle" => Subcommand::Oracle,
        other => return Err(PyValueError::new_err(format!("unknown subcommand {other:?}"))),
    })
}

fn variant(name: &str) -> PyResult<Variant> {
    match name {
        "y" => Ok(Variant::Y),
        "zprime" => Ok(Variant::ZPrime),
        other => Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    }
}

/// Canonical, fully parenthesized form of a driver expression.
#[pyfunction]
fn parse_driver(text: &str) -> PyResult<String> {
    dsl::parse_driver(text).map(|d| d.to_string()).map_err(value_err)
}

/// Solve the config's problem on `steps` steps.
///
/// Returns a dict with `grid`, `u` (one list per grid point) and `law`.
#[pyfunction]
#[pyo3(signature = (config_json, steps=None))]
fn solve<'py>(py: Python<'py>, config_json: &str, steps: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let config = ExperimentConfig::from_json(config_json).map_err(value_err)?;
    let p = config.problem().map_err(value_err)?;
    let sol = py
        .allow_threads(|| solve_markovian(&p, steps.unwrap_or(config.solver.steps)))
        .map_err(value_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("grid", sol.grid.clone())?;
    out.set_item("u", sol.u.iter().map(|u| u.as_slice().to_vec()).collect::<Vec<_>>())?;
    out.set_item(
        "law",
        sol.law.laws.iter().map(|m| m.as_slice().to_vec()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Run Picard iteration; returns `(u0, gaps)` with one `(u_gap, z_gap)`
/// pair per iteration.
#[pyfunction]
#[pyo3(signature = (config_json, steps=None, variant="y"))]
fn picard(
    py: Python<'_>,
    config_json: &str,
    steps: Option<usize>,
    variant: &str,
) -> PyResult<(Vec<f64>, Vec<(f64, f64)>)> {
    let config = ExperimentConfig::from_json(config_json).map_err(value_err)?;
    let p = config.problem().map_err(value_err)?;
    let opts = PicardOptions {
        variant: self::variant(variant)?,
        max_iter: config.solver.max_iter,
        tol: config.solver.tol,
        ..PicardOptions::default()
    };
    let steps = steps.unwrap_or(config.solver.steps);
    let out = py
        .allow_threads(|| picard_solve(&p, steps, &opts))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let gaps = out
        .diagnostics
        .iterations
        .iter()
        .map(|s| (s.u_gap, s.z_gap))
        .collect();
    Ok((out.solution.initial().as_slice().to_vec(), gaps))
}

/// Run a subcommand as the command line tool would. Returns
/// `(exit_code, artifacts, summary)`.
#[pyfunction]
#[pyo3(signature = (subcommand, config_path, out=None, seed=None, steps=None, variant=None))]
fn run(
    py: Python<'_>,
    subcommand: &str,
    config_path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    steps: Option<usize>,
    variant: Option<&str>,
) -> PyResult<(i32, Vec<String>, String)> {
    let cmd = self::subcommand(subcommand)?;
    let overrides = Overrides {
        out,
        seed,
        steps,
        variant: variant.map(self::variant).transpose()?,
    };
    let outcome = py.allow_threads(|| harness::run_file(&config_path, cmd, &overrides));
    Ok((outcome.exit_code, outcome.artifacts, outcome.summary))
}

#[pymodule]
fn mfbsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(parse_driver, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(picard, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

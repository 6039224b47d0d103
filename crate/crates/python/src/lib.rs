//! Python bindings. Specs are passed as JSON text or as a dict; results come
//! back as plain Python objects.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde_json::{json, Value};

use jackson_ldp::local_rate::{face_of, solve_lj, LocalRateError, LocalRateProblem};
use jackson_ldp::model::{self, Network, NetworkSpec};
use jackson_ldp::path::{action, PiecewiseLinearPath};
use jackson_ldp::quasipotential::{solve_v, solve_v_finite_sweep, SearchOptions};
use jackson_ldp::sim::{estimate_tail, simulate, SimOptions, TailOptions};

fn invalid(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn spec_from(obj: &Bound<'_, PyAny>) -> PyResult<NetworkSpec> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    NetworkSpec::from_json_str(&text).map_err(invalid)
}

fn network(obj: &Bound<'_, PyAny>) -> PyResult<Network> {
    Network::new(spec_from(obj)?).map_err(invalid)
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

/// Spectral radius of a nonnegative square matrix.
#[pyfunction]
fn spectral_radius(p: Vec<Vec<f64>>) -> PyResult<f64> {
    model::spectral_radius(&p).map_err(invalid)
}

/// `(I - P^T)^{-1} lambda`.
#[pyfunction]
fn effective_rates(lam: Vec<f64>, p: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    model::effective_rates(&lam, &p).map_err(invalid)
}

/// Validation report as a dict; `passed` tells whether every check held.
#[pyfunction]
fn validate<'py>(py: Python<'py>, spec: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let report = model::validate(&spec_from(spec)?);
    let mut value = serde_json::to_value(&report).map_err(invalid)?;
    value["passed"] = json!(report.passed());
    to_py(py, &value)
}

/// Local rate `L(x, y)` with its minimizer; `value` is `inf` when `y` cannot
/// be produced at finite cost.
#[pyfunction]
fn local_rate<'py>(py: Python<'py>, spec: &Bound<'py, PyAny>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let net = network(spec)?;
    if x.len() != net.k() || x.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid(format!("x must be a nonnegative {}-vector", net.k())));
    }
    match solve_lj(&LocalRateProblem::new(&net, face_of(&x), y)) {
        Ok(sol) => to_py(py, &serde_json::to_value(&sol).map_err(invalid)?),
        Err(LocalRateError::Infeasible { .. }) => to_py(py, &json!({ "value": "inf" })).and_then(|d| {
            d.set_item("value", f64::INFINITY)?;
            Ok(d)
        }),
        Err(e @ LocalRateError::InvalidInput(_)) => Err(invalid(e)),
        Err(e) => Err(PyRuntimeError::new_err(e.to_string())),
    }
}

/// Action of the piecewise-linear path through `positions` at `times`,
/// started from `q0` (the first position when omitted).
#[pyfunction]
#[pyo3(signature = (spec, times, positions, q0=None))]
fn path_action(
    spec: &Bound<'_, PyAny>,
    times: Vec<f64>,
    positions: Vec<Vec<f64>>,
    q0: Option<Vec<f64>>,
) -> PyResult<f64> {
    let net = network(spec)?;
    let path = PiecewiseLinearPath::new(times, positions).map_err(invalid)?;
    let q0 = q0.unwrap_or_else(|| path.start().to_vec());
    action(&net, &path, &q0).map(|v| v.to_f64()).map_err(invalid)
}

fn search(segments: Option<usize>, starts: usize, seed: u64) -> SearchOptions {
    SearchOptions { max_segments: segments, starts, seed, ..SearchOptions::default() }
}

/// `V(x)` with the optimal path and search diagnostics.
#[pyfunction]
#[pyo3(signature = (spec, x, segments=None, starts=16, seed=0))]
fn quasipotential<'py>(
    py: Python<'py>,
    spec: &Bound<'py, PyAny>,
    x: Vec<f64>,
    segments: Option<usize>,
    starts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let net = network(spec)?;
    let r = py.detach(|| solve_v(&net, &x, &search(segments, starts, seed))).map_err(invalid)?;
    to_py(py, &serde_json::to_value(&r).map_err(invalid)?)
}

/// Finite-horizon values, one dict per horizon in the order given.
#[pyfunction]
#[pyo3(signature = (spec, x, horizons, segments=None, starts=16, seed=0))]
fn quasipotential_finite<'py>(
    py: Python<'py>,
    spec: &Bound<'py, PyAny>,
    x: Vec<f64>,
    horizons: Vec<f64>,
    segments: Option<usize>,
    starts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let net = network(spec)?;
    let r = py
        .detach(|| solve_v_finite_sweep(&net, &x, &horizons, &search(segments, starts, seed)))
        .map_err(invalid)?;
    to_py(py, &serde_json::to_value(&r).map_err(invalid)?)
}

/// Runs the simulator to `horizon`; returns the event count, the event log
/// digest and the final state.
#[pyfunction]
#[pyo3(signature = (spec, horizon, seed=0))]
fn run_simulation<'py>(py: Python<'py>, spec: &Bound<'py, PyAny>, horizon: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let net = network(spec)?;
    let run = py.detach(|| simulate(&net, horizon, seed, &SimOptions::default())).map_err(invalid)?;
    to_py(
        py,
        &json!({ "events": run.event_count, "digest": run.digest, "final_state": run.final_state }),
    )
}

/// Tail probabilities `P(Q/n >= x)` on `n_grid` and the fitted decay rate.
#[pyfunction]
#[pyo3(signature = (spec, x, n_grid, reps, seed=0))]
fn tail<'py>(
    py: Python<'py>,
    spec: &Bound<'py, PyAny>,
    x: Vec<f64>,
    n_grid: Vec<u32>,
    reps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let net = network(spec)?;
    let est = py
        .detach(|| estimate_tail(&net, &x, &n_grid, reps, seed, &TailOptions::default()))
        .map_err(invalid)?;
    to_py(py, &serde_json::to_value(&est).map_err(invalid)?)
}

#[pymodule]
fn pyjackson(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(spectral_radius, m)?)?;
    m.add_function(wrap_pyfunction!(effective_rates, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(local_rate, m)?)?;
    m.add_function(wrap_pyfunction!(path_action, m)?)?;
    m.add_function(wrap_pyfunction!(quasipotential, m)?)?;
    m.add_function(wrap_pyfunction!(quasipotential_finite, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(tail, m)?)?;
    Ok(())
}

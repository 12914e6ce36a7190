//! Python module `plab`: config validation, single runs, srank and the
//! gridworld agent, all exchanging plain strings, lists and numbers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use plab_core::metrics;
use plab_core::nn::Tensor2;
use plab_core::rl::{train_agent, RlRunConfig};
use plab_core::runner::{run_single, RunConfig};
use plab_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Validates a run config and returns it as JSON with every default filled in.
#[pyfunction]
fn validate_config(config_json: &str) -> PyResult<String> {
    let cfg = RunConfig::from_json_str(config_json).map_err(to_py)?;
    serde_json::to_string_pretty(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn run_id(config_json: &str) -> PyResult<String> {
    Ok(RunConfig::from_json_str(config_json).map_err(to_py)?.run_id())
}

/// Trains one seed and returns the trajectory CSV text.
#[pyfunction]
fn run(py: Python<'_>, config_json: &str, seed: u64) -> PyResult<String> {
    let cfg = RunConfig::from_json_str(config_json).map_err(to_py)?;
    let out = py.detach(|| run_single(&cfg, seed)).map_err(to_py)?;
    out.to_csv_string().map_err(to_py)
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor2> {
    Tensor2::from_rows(&rows).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (features, delta = metrics::SRANK_DELTA))]
fn srank(features: Vec<Vec<f64>>, delta: f64) -> PyResult<usize> {
    metrics::srank(&tensor(features)?, delta).map_err(to_py)
}

#[pyfunction]
fn singular_values(matrix: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(metrics::singular_values(&tensor(matrix)?))
}

/// `µ·tortoise + (1 − µ)·hare`, elementwise.
#[pyfunction]
fn ema(tortoise: Vec<f64>, hare: Vec<f64>, momentum: f64) -> PyResult<Vec<f64>> {
    if tortoise.len() != hare.len() {
        return Err(PyValueError::new_err("tortoise and hare lengths differ"));
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(PyValueError::new_err("momentum must be in [0, 1]"));
    }
    Ok(tortoise.iter().zip(&hare).map(|(t, h)| momentum * t + (1.0 - momentum) * h).collect())
}

/// Runs the gridworld agent from a `{"rl": {...}}` document for one seed;
/// returns the `episode,return,param_dist,event` CSV text.
#[pyfunction]
fn rl_run(py: Python<'_>, config_json: &str, seed: u64) -> PyResult<String> {
    let cfg = RlRunConfig::from_json_str(config_json).map_err(to_py)?;
    let trace = py.detach(|| train_agent(&cfg.world, &cfg.agent, cfg.episodes, seed)).map_err(to_py)?;
    Ok(trace.to_csv())
}

#[pymodule]
fn plab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_id, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(srank, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(ema, m)?)?;
    m.add_function(wrap_pyfunction!(rl_run, m)?)?;
    Ok(())
}

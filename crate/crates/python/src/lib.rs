//! Python module `rhmc_py`: polytope generation, sampling, volume estimation
//! and the verification suites. Polytopes cross the boundary as JSON text in
//! the same format the CLI reads.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rhmc::cooling::{estimate_volume, CoolingConfig};
use rhmc::io::{polytope_from_json, polytope_to_json};
use rhmc::verify::{run_suite, Suite, VerifyConfig};
use rhmc::{generate, run_chains, BodyKind, GenParams, Polytope, RhmcError, SamplerConfig};

fn to_py(e: RhmcError) -> PyErr {
    match e {
        RhmcError::Input(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_text<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn parse(polytope: &str) -> PyResult<Polytope> {
    polytope_from_json(polytope).map_err(to_py)
}

/// Polytope JSON for a generated body (`cube`, `simplex`, `random_halfspaces`).
#[pyfunction]
#[pyo3(signature = (kind, n, m=None, seed=None))]
fn generate_polytope(kind: &str, n: usize, m: Option<usize>, seed: Option<u64>) -> PyResult<String> {
    let kind: BodyKind = kind.parse().map_err(to_py)?;
    let p = generate(kind, n, GenParams { m, seed }).map_err(to_py)?;
    Ok(polytope_to_json(&p))
}

/// Runs the sampler; returns `(draws, report_json)` with draws as rows of
/// `[chain, step, x_0, ..., x_{n-1}]`.
#[pyfunction]
#[pyo3(signature = (polytope, alpha=0.0, steps=1000, chains=4, seed=0, step_constant=0.1, thinning=1))]
fn sample(
    py: Python<'_>,
    polytope: &str,
    alpha: f64,
    steps: usize,
    chains: usize,
    seed: u64,
    step_constant: f64,
    thinning: usize,
) -> PyResult<(Vec<Vec<f64>>, String)> {
    let p = parse(polytope)?;
    let cfg = SamplerConfig {
        alpha,
        steps,
        chains,
        seed,
        step_constant,
        thinning,
        ..Default::default()
    };
    let (set, report) = py.detach(|| run_chains(&p, &cfg, None)).map_err(to_py)?;
    let rows = set
        .records
        .iter()
        .map(|r| {
            let mut row = vec![r.chain as f64, r.step as f64];
            row.extend_from_slice(&r.x);
            row
        })
        .collect();
    Ok((rows, json_text(&report)?))
}

/// Volume estimate as JSON text.
#[pyfunction]
#[pyo3(signature = (polytope, eps=0.2, seed=0, k_max=800))]
fn volume(py: Python<'_>, polytope: &str, eps: f64, seed: u64, k_max: usize) -> PyResult<String> {
    let p = parse(polytope)?;
    let cfg = CoolingConfig {
        k_max: (k_max > 0).then_some(k_max),
        ..CoolingConfig::practical(p.n())
    };
    let est = py.detach(|| estimate_volume(&p, eps, &cfg, seed)).map_err(to_py)?;
    json_text(&est)
}

/// Runs the named suites; returns the result table as JSON text.
#[pyfunction]
#[pyo3(signature = (suites, polytope=None, seed=0, trajectories=1000))]
fn check(py: Python<'_>, suites: Vec<String>, polytope: Option<&str>, seed: u64, trajectories: usize) -> PyResult<String> {
    let p = polytope.map(parse).transpose()?;
    let suites = suites
        .iter()
        .map(|s| s.parse::<Suite>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let cfg = VerifyConfig {
        seed,
        trajectories,
        ..Default::default()
    };
    let results = py
        .detach(|| -> Result<Vec<_>, RhmcError> {
            let mut out = Vec::new();
            for s in suites {
                out.extend(run_suite(s, p.as_ref(), &cfg)?);
            }
            Ok(out)
        })
        .map_err(to_py)?;
    json_text(&results)
}

#[pymodule]
fn rhmc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_polytope, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(volume, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}

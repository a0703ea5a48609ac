//! Python bindings: statistics helpers, the cache simulator and trace
//! language, patch handling on a source roster, and the search/validate
//! commands. Structured results come back as plain dicts.

use std::path::PathBuf;

use cachegi::cachesim::{parse_trace_program, run_trace_program, simulate, Access, Bindings, CacheConfig};
use cachegi::cli::{cmd_search, cmd_validate, SearchArgs, ValidateArgs};
use cachegi::source_model::{apply_patch, format_patch, ingest_source, parse_patch, SourceRoster, StripPolicy};
use cachegi::stats;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes through JSON so every result is a plain Python structure.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn strip_policy(strip: bool) -> StripPolicy {
    if strip {
        StripPolicy::CommentsAndBlank
    } else {
        StripPolicy::None
    }
}

/// Steps needed to visit all `n` lines with probability `confidence`.
#[pyfunction]
#[pyo3(signature = (n, confidence=0.99))]
fn coupon_budget(n: usize, confidence: f64) -> PyResult<u64> {
    stats::coupon_budget(n, confidence).map_err(value_err)
}

#[pyfunction]
fn coverage_probability(n: usize, draws: u64) -> f64 {
    stats::coverage_probability(n, draws)
}

/// Nearest-rank first quartile.
#[pyfunction]
fn quartile1(samples: Vec<f64>) -> PyResult<f64> {
    stats::quartile1(&samples).map_err(value_err)
}

/// Returns `{"u", "p_two_sided", "method"}`.
#[pyfunction]
fn mann_whitney<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &stats::mann_whitney(&a, &b).map_err(value_err)?)
}

/// Replays `(kind, address, size)` accesses, kind `"R"` or `"W"`, through a
/// cold cache and returns its counters.
#[pyfunction]
#[pyo3(signature = (accesses, size=32768, line=64, ways=8))]
fn simulate_accesses<'py>(
    py: Python<'py>,
    accesses: Vec<(String, u64, u8)>,
    size: u64,
    line: u64,
    ways: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = CacheConfig::new(size, line, ways).map_err(value_err)?;
    let trace = accesses
        .into_iter()
        .map(|(kind, addr, bytes)| match kind.as_str() {
            "R" | "r" => Ok(Access::read(addr, bytes)),
            "W" | "w" => Ok(Access::write(addr, bytes)),
            other => Err(value_err(format!("access kind must be R or W, got {other:?}"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    to_py(py, &simulate(&config, trace))
}

#[derive(Serialize)]
struct ProgramRun {
    accesses: u64,
    misses: u64,
    evictions: u64,
    emitted: Vec<i64>,
}

/// Runs a trace-language program with `bindings` (for example
/// `{"seed": 1}`) against a cold cache.
#[pyfunction]
#[pyo3(signature = (program, bindings=None, size=32768, line=64, ways=8, access_limit=10_000_000))]
fn run_trace<'py>(
    py: Python<'py>,
    program: &str,
    bindings: Option<std::collections::BTreeMap<String, i64>>,
    size: u64,
    line: u64,
    ways: u64,
    access_limit: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = CacheConfig::new(size, line, ways).map_err(value_err)?;
    let program = parse_trace_program(program).map_err(value_err)?;
    let run = run_trace_program(&program, &Bindings(bindings.unwrap_or_default()), access_limit).map_err(value_err)?;
    let stats = simulate(&config, run.accesses);
    to_py(
        py,
        &ProgramRun {
            accesses: stats.accesses,
            misses: stats.misses,
            evictions: stats.evictions,
            emitted: run.emitted,
        },
    )
}

/// The mutable lines of one or more source files.
#[pyclass(name = "Roster", frozen)]
struct PyRoster {
    inner: SourceRoster,
}

#[pymethods]
impl PyRoster {
    /// Reads files from disk; `strip` drops comments and blank lines.
    #[new]
    #[pyo3(signature = (paths, strip=false))]
    fn new(paths: Vec<PathBuf>, strip: bool) -> PyResult<Self> {
        Ok(Self {
            inner: ingest_source(&paths, strip_policy(strip)).map_err(value_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, text, strip=false))]
    fn from_text(path: &str, text: &str, strip: bool) -> PyResult<Self> {
        Ok(Self {
            inner: SourceRoster::from_text(path, text, strip_policy(strip)).map_err(value_err)?,
        })
    }

    #[getter]
    fn mutable_lines(&self) -> usize {
        self.inner.mutable_points().len()
    }

    /// Parses and re-formats a patch, raising on malformed text.
    fn normalize_patch(&self, patch: &str) -> PyResult<String> {
        let p = parse_patch(patch, &self.inner).map_err(value_err)?;
        Ok(format_patch(&p, &self.inner))
    }

    /// Applies a patch and returns `[(path, text), ...]`.
    fn apply(&self, patch: &str) -> PyResult<Vec<(String, String)>> {
        let p = parse_patch(patch, &self.inner).map_err(value_err)?;
        let out = apply_patch(&self.inner, &p).map_err(value_err)?;
        Ok(out.files.into_iter().map(|f| (f.path, f.text)).collect())
    }

    fn __len__(&self) -> usize {
        self.mutable_lines()
    }
}

/// Runs a full search from a TOML config and returns its summary.
#[pyfunction]
#[pyo3(signature = (config, seed=None, budget=None, output_dir=None, force=false))]
fn search<'py>(
    py: Python<'py>,
    config: PathBuf,
    seed: Option<u64>,
    budget: Option<u64>,
    output_dir: Option<PathBuf>,
    force: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut args = SearchArgs::new(config);
    args.seed = seed;
    args.budget = budget;
    args.output_dir = output_dir;
    args.force = force;
    let summary = py.detach(|| cmd_search(&args)).map_err(|e| value_err(format!("{e:#}")))?;
    to_py(py, &summary)
}

/// Checks a patch against the config's holdout suite.
#[pyfunction]
#[pyo3(signature = (config, patch, repeats=None, alpha=0.05, json=None))]
fn validate<'py>(
    py: Python<'py>,
    config: PathBuf,
    patch: PathBuf,
    repeats: Option<usize>,
    alpha: f64,
    json: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let args = ValidateArgs {
        config,
        patch,
        repeats,
        alpha,
        json,
    };
    let report = py.detach(|| cmd_validate(&args)).map_err(|e| value_err(format!("{e:#}")))?;
    to_py(py, &report)
}

#[pymodule]
fn cachegi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(coupon_budget, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_probability, m)?)?;
    m.add_function(wrap_pyfunction!(quartile1, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_accesses, m)?)?;
    m.add_function(wrap_pyfunction!(run_trace, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_class::<PyRoster>()?;
    Ok(())
}

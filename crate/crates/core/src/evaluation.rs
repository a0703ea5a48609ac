//! The four fitness gates: compile, run, compare output, measure.
//!
//! A tabu check on the compiled artifact sits between compiling and running.
//! Gates run in order and stop at the first failure, so a patch that fails on
//! test case k never executes cases after k and never reaches measurement.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::{Driver, RunFailure};
use crate::source_model::PatchedSource;
use crate::stats::quartile1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub id: String,
    pub input: Vec<u8>,
    pub expected_output: Vec<u8>,
    pub expected_exit: i32,
}

impl TestCase {
    pub fn new(id: &str, input: impl AsRef<[u8]>, expected_output: impl AsRef<[u8]>, expected_exit: i32) -> Self {
        Self {
            id: id.to_string(),
            input: input.as_ref().to_vec(),
            expected_output: expected_output.as_ref().to_vec(),
            expected_exit,
        }
    }
}

/// A suite entry before its expectations are filled in from the original
/// program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSpec {
    pub id: String,
    pub input: Vec<u8>,
    pub expected_output: Option<Vec<u8>>,
    pub expected_exit: Option<i32>,
}

/// Either inline UTF-8 text or `{"base64": "..."}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Payload {
    Text(String),
    Encoded { base64: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseRecord {
    id: String,
    input: Payload,
    #[serde(default)]
    expected_output: Option<Payload>,
    #[serde(default)]
    expected_exit: Option<i32>,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read test suite {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("test suite {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("test suite {0} is empty")]
    Empty(PathBuf),
    #[error("original program fails to compile: {0}")]
    OriginalCompile(String),
    #[error("original program failed on test case {id}: {message}")]
    OriginalRun { id: String, message: String },
}

fn decode(payload: Payload, path: &Path, id: &str) -> Result<Vec<u8>, SuiteError> {
    match payload {
        Payload::Text(s) => Ok(s.into_bytes()),
        Payload::Encoded { base64 } => base64::engine::general_purpose::STANDARD
            .decode(base64.as_bytes())
            .map_err(|e| SuiteError::Format {
                path: path.to_path_buf(),
                message: format!("case {id}: bad base64: {e}"),
            }),
    }
}

/// Parses a suite file: a JSON array of `{id, input, expected_output?,
/// expected_exit?}` records.
pub fn parse_suite(text: &str, path: &Path) -> Result<Vec<CaseSpec>, SuiteError> {
    let records: Vec<CaseRecord> = serde_json::from_str(text).map_err(|e| SuiteError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if records.is_empty() {
        return Err(SuiteError::Empty(path.to_path_buf()));
    }
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .map(|r| {
            if !seen.insert(r.id.clone()) {
                return Err(SuiteError::Format {
                    path: path.to_path_buf(),
                    message: format!("duplicate case id {}", r.id),
                });
            }
            Ok(CaseSpec {
                input: decode(r.input, path, &r.id)?,
                expected_output: r.expected_output.map(|p| decode(p, path, &r.id)).transpose()?,
                expected_exit: r.expected_exit,
                id: r.id,
            })
        })
        .collect()
}

pub fn load_suite(path: &Path) -> Result<Vec<CaseSpec>, SuiteError> {
    let text = fs::read_to_string(path).map_err(|source| SuiteError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_suite(&text, path)
}

/// Fills missing expectations by running the original program once per case.
/// Supplied expectations are kept as given.
pub fn record_expectations<D: Driver>(
    driver: &mut D,
    original: &PatchedSource,
    specs: Vec<CaseSpec>,
) -> Result<Vec<TestCase>, SuiteError> {
    let needs_run = specs.iter().any(|s| s.expected_output.is_none() || s.expected_exit.is_none());
    let artifact = if needs_run {
        Some(
            driver
                .compile(original)
                .map_err(|e| SuiteError::OriginalCompile(e.diagnostic))?,
        )
    } else {
        None
    };
    specs
        .into_iter()
        .map(|spec| {
            let (output, exit) = match (spec.expected_output, spec.expected_exit, &artifact) {
                (Some(o), Some(e), _) => (o, e),
                (o, e, Some(artifact)) => {
                    let probe = TestCase::new(&spec.id, &spec.input, [], 0);
                    let run = driver.run(artifact, &probe, false).map_err(|f| SuiteError::OriginalRun {
                        id: spec.id.clone(),
                        message: f.to_string(),
                    })?;
                    (o.unwrap_or(run.output), e.unwrap_or(run.exit_status))
                }
                _ => unreachable!("artifact compiled whenever an expectation is missing"),
            };
            Ok(TestCase {
                id: spec.id,
                input: spec.input,
                expected_output: output,
                expected_exit: exit,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateStatus {
    CompileError,
    TabuDuplicate,
    RunError,
    Timeout,
    /// 1-based index of the first failing test case.
    OutputMismatch(usize),
    Ok,
}

impl GateStatus {
    pub fn is_ok(self) -> bool {
        self == GateStatus::Ok
    }

    pub fn category(self) -> Category {
        match self {
            GateStatus::CompileError => Category::CompileError,
            GateStatus::TabuDuplicate => Category::Duplicate,
            GateStatus::RunError | GateStatus::OutputMismatch(_) => Category::TestFailed,
            GateStatus::Timeout => Category::Timeout,
            GateStatus::Ok => Category::Ok,
        }
    }
}

impl fmt::Display for GateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateStatus::CompileError => f.write_str("compile_error"),
            GateStatus::TabuDuplicate => f.write_str("tabu_duplicate"),
            GateStatus::RunError => f.write_str("run_error"),
            GateStatus::Timeout => f.write_str("timeout"),
            GateStatus::OutputMismatch(i) => write!(f, "output_mismatch:{i}"),
            GateStatus::Ok => f.write_str("ok"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown gate status `{0}`")]
pub struct GateStatusParseError(String);

impl FromStr for GateStatus {
    type Err = GateStatusParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "compile_error" => GateStatus::CompileError,
            "tabu_duplicate" => GateStatus::TabuDuplicate,
            "run_error" => GateStatus::RunError,
            "timeout" => GateStatus::Timeout,
            "ok" => GateStatus::Ok,
            _ => {
                let index = s
                    .strip_prefix("output_mismatch:")
                    .and_then(|i| i.parse().ok())
                    .ok_or_else(|| GateStatusParseError(s.to_string()))?;
                GateStatus::OutputMismatch(index)
            }
        })
    }
}

impl Serialize for GateStatus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GateStatus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Accounting buckets for step outcomes. Run errors and output mismatches
/// are both "test failed".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CompileError,
    TestFailed,
    Timeout,
    Duplicate,
    Ok,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::CompileError,
        Category::TestFailed,
        Category::Timeout,
        Category::Duplicate,
        Category::Ok,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::CompileError => "compile error",
            Category::TestFailed => "test failed",
            Category::Timeout => "time out",
            Category::Duplicate => "duplicate",
            Category::Ok => "ok",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub status: GateStatus,
    pub detail: String,
}

impl GateOutcome {
    pub fn ok() -> Self {
        Self::new(GateStatus::Ok, "")
    }

    pub fn new(status: GateStatus, detail: impl Into<String>) -> Self {
        Self {
            status,
            detail: detail.into(),
        }
    }
}

/// `metric_samples` is non-empty exactly when the outcome is Ok.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub outcome: GateOutcome,
    pub metric_samples: Vec<Vec<u64>>,
    pub summarized_metric: Option<f64>,
    pub relative_fitness: Option<f64>,
}

impl FitnessRecord {
    pub fn failed(status: GateStatus, detail: impl Into<String>) -> Self {
        Self {
            outcome: GateOutcome::new(status, detail),
            metric_samples: Vec::new(),
            summarized_metric: None,
            relative_fitness: None,
        }
    }

    /// The nominal fitness of the unpatched program: the warm-up baseline
    /// itself, relative fitness exactly 1.
    pub fn unpatched(baseline: f64) -> Self {
        Self {
            outcome: GateOutcome::ok(),
            metric_samples: Vec::new(),
            summarized_metric: Some(baseline),
            relative_fitness: Some(1.0),
        }
    }

    pub fn status(&self) -> GateStatus {
        self.outcome.status
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.status.is_ok()
    }

    /// Relative fitness when a baseline was known, otherwise the raw
    /// summarized metric.
    fn score(&self) -> Option<f64> {
        self.relative_fitness.or(self.summarized_metric)
    }

    pub fn rebase(&mut self, baseline: f64) {
        self.relative_fitness = self.summarized_metric.map(|m| m / baseline);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessOrdering {
    ABetter,
    BBetter,
    Equal,
}

/// Any success beats any failure; failures are mutually unranked; successes
/// compare by relative fitness, lower is better.
pub fn compare_fitness(a: &FitnessRecord, b: &FitnessRecord) -> FitnessOrdering {
    match (a.is_ok(), b.is_ok()) {
        (true, false) => FitnessOrdering::ABetter,
        (false, true) => FitnessOrdering::BBetter,
        (false, false) => FitnessOrdering::Equal,
        (true, true) => match a.score().partial_cmp(&b.score()) {
            Some(Ordering::Less) => FitnessOrdering::ABetter,
            Some(Ordering::Greater) => FitnessOrdering::BBetter,
            _ => FitnessOrdering::Equal,
        },
    }
}

/// Nearest-rank first quartile of one case's samples.
pub fn summarize_metric(samples: &[f64]) -> Result<f64, crate::stats::StatsError> {
    quartile1(samples)
}

/// Consulted between compiling and running. Returns true when the artifact
/// was seen before, in which case the candidate is not run.
pub trait ArtifactFilter {
    fn is_duplicate(&mut self, artifact: &[u8]) -> std::io::Result<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Metric runs per test case.
    pub repeats: usize,
    /// Warm-up baseline; when absent `relative_fitness` stays empty.
    pub baseline: Option<f64>,
}

impl EvalOptions {
    pub fn new(repeats: usize, baseline: Option<f64>) -> Self {
        Self { repeats, baseline }
    }
}

/// Unrecoverable problems outside the candidate's control.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("tabu store: {0}")]
    Tabu(#[from] std::io::Error),
    #[error("evaluation needs a non-empty suite and at least one repeat")]
    Contract,
}

fn run_failure(f: RunFailure) -> FitnessRecord {
    match f {
        RunFailure::Timeout(d) => FitnessRecord::failed(GateStatus::Timeout, d),
        RunFailure::Fault(d) => FitnessRecord::failed(GateStatus::RunError, d),
    }
}

/// Runs the gates over `suite` for one patched program.
pub fn evaluate<D: Driver>(
    source: &PatchedSource,
    suite: &[TestCase],
    driver: &mut D,
    options: &EvalOptions,
    tabu: Option<&mut dyn ArtifactFilter>,
) -> Result<FitnessRecord, EvalError> {
    if suite.is_empty() || options.repeats == 0 {
        return Err(EvalError::Contract);
    }
    let artifact = match driver.compile(source) {
        Ok(a) => a,
        Err(e) => return Ok(FitnessRecord::failed(GateStatus::CompileError, e.diagnostic)),
    };
    if let Some(tabu) = tabu {
        if tabu.is_duplicate(artifact.as_ref())? {
            return Ok(FitnessRecord::failed(
                GateStatus::TabuDuplicate,
                format!("artifact of {} bytes seen before", artifact.as_ref().len()),
            ));
        }
    }
    for (i, case) in suite.iter().enumerate() {
        let out = match driver.run(&artifact, case, false) {
            Ok(out) => out,
            Err(f) => return Ok(run_failure(f)),
        };
        if out.exit_status != case.expected_exit {
            let detail = format!(
                "case {}: exit status {} (expected {}) {}",
                case.id,
                out.exit_status,
                case.expected_exit,
                out.detail.trim()
            );
            let status = if case.expected_exit == 0 {
                GateStatus::RunError
            } else {
                GateStatus::OutputMismatch(i + 1)
            };
            return Ok(FitnessRecord::failed(status, detail.trim_end()));
        }
        if out.output != case.expected_output {
            return Ok(FitnessRecord::failed(
                GateStatus::OutputMismatch(i + 1),
                format!("case {}: output differs", case.id),
            ));
        }
    }
    let mut samples = Vec::with_capacity(suite.len());
    let mut summarized = 0.0;
    for case in suite {
        let mut per_case = Vec::with_capacity(options.repeats);
        for _ in 0..options.repeats {
            match driver.run(&artifact, case, true) {
                Ok(out) => match out.metric {
                    Some(m) => per_case.push(m),
                    None => {
                        return Ok(FitnessRecord::failed(
                            GateStatus::RunError,
                            format!("case {}: no metric reported", case.id),
                        ))
                    }
                },
                Err(f) => return Ok(run_failure(f)),
            }
        }
        let as_f64: Vec<f64> = per_case.iter().map(|&m| m as f64).collect();
        summarized += quartile1(&as_f64).expect("repeats >= 1");
        samples.push(per_case);
    }
    Ok(FitnessRecord {
        outcome: GateOutcome::ok(),
        metric_samples: samples,
        summarized_metric: Some(summarized),
        relative_fitness: options.baseline.map(|b| summarized / b),
    })
}

//! Measurement backends: the deterministic simulator driver and an
//! external-command driver for real build/run/counter pipelines.

mod counters;
pub mod external;
pub mod sim;

pub use counters::{parse_counter_output, CounterFormat, CounterParseError};
pub use external::{ExternalArtifact, ExternalDriver, ExternalDriverConfig};
pub use sim::{NoiseConfig, SimArtifact, SimDriver, SimDriverConfig};

use thiserror::Error;

use crate::evaluation::TestCase;
use crate::source_model::PatchedSource;

/// Compilation failed; `diagnostic` holds the first useful message.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("compile error: {diagnostic}")]
pub struct CompileFailure {
    pub diagnostic: String,
}

impl CompileFailure {
    pub fn new(diagnostic: impl Into<String>) -> Self {
        Self {
            diagnostic: diagnostic.into(),
        }
    }
}

/// Failures of the run itself, as opposed to a program that ran and
/// reported an error through its exit status.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunFailure {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("{0}")]
    Fault(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub output: Vec<u8>,
    pub exit_status: i32,
    pub metric: Option<u64>,
    /// Diagnostics (stderr or interpreter error text); not compared.
    pub detail: String,
}

pub trait Driver {
    type Artifact: AsRef<[u8]>;

    /// Builds the patched program. The artifact's bytes feed the tabu store.
    fn compile(&mut self, source: &PatchedSource) -> Result<Self::Artifact, CompileFailure>;

    fn run(&mut self, artifact: &Self::Artifact, case: &TestCase, collect_metric: bool) -> Result<RunOutput, RunFailure>;

    /// Called by the search before each step's evaluations.
    fn begin_step(&mut self, _step: u64) {}
}

impl<D: Driver + ?Sized> Driver for &mut D {
    type Artifact = D::Artifact;

    fn compile(&mut self, source: &PatchedSource) -> Result<Self::Artifact, CompileFailure> {
        (**self).compile(source)
    }

    fn run(&mut self, artifact: &Self::Artifact, case: &TestCase, collect_metric: bool) -> Result<RunOutput, RunFailure> {
        (**self).run(artifact, case, collect_metric)
    }

    fn begin_step(&mut self, step: u64) {
        (**self).begin_step(step)
    }
}

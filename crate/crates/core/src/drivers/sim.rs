//! Simulator driver: "compiling" parses the trace language, running executes
//! it against a cold simulated cache.

use serde::{Deserialize, Serialize};

use super::{CompileFailure, Driver, RunFailure, RunOutput};
use crate::cachesim::dsl::{Bindings, RuntimeError};
use crate::cachesim::{parse_trace_program, Cache, CacheConfig, TraceProgram};
use crate::evaluation::TestCase;
use crate::operators::RngHandle;
use crate::source_model::PatchedSource;

/// Seeded measurement noise for robustness experiments. Each metric is
/// scaled by `1 + amplitude * u` with `u` uniform in `[-1, 1]`, then by the
/// multiplier of the latest `drift_schedule` entry whose step has been
/// reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    pub amplitude: f64,
    #[serde(default)]
    pub drift_schedule: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDriverConfig {
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default = "default_access_limit")]
    pub access_limit: u64,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

fn default_access_limit() -> u64 {
    10_000_000
}

impl Default for SimDriverConfig {
    fn default() -> Self {
        Self {
            cache: CacheConfig::default(),
            access_limit: default_access_limit(),
            noise: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimArtifact {
    bytes: Vec<u8>,
    program: TraceProgram,
}

impl SimArtifact {
    pub fn program(&self) -> &TraceProgram {
        &self.program
    }
}

impl AsRef<[u8]> for SimArtifact {
    fn as_ref(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct SimDriver {
    config: SimDriverConfig,
    noise_rng: Option<RngHandle>,
    step: u64,
}

impl SimDriver {
    pub fn new(config: SimDriverConfig) -> Self {
        let noise_rng = config.noise.as_ref().map(|n| RngHandle::new(n.seed));
        Self {
            config,
            noise_rng,
            step: 0,
        }
    }

    pub fn config(&self) -> &SimDriverConfig {
        &self.config
    }

    fn noisy(&mut self, misses: u64) -> u64 {
        let (Some(noise), Some(rng)) = (&self.config.noise, &mut self.noise_rng) else {
            return misses;
        };
        let jitter = 1.0 + noise.amplitude * (2.0 * rng.unit() - 1.0);
        let drift = noise
            .drift_schedule
            .iter()
            .filter(|(step, _)| *step <= self.step)
            .max_by_key(|(step, _)| *step)
            .map_or(1.0, |(_, m)| *m);
        (misses as f64 * jitter * drift).round().max(0.0) as u64
    }
}

impl Driver for SimDriver {
    type Artifact = SimArtifact;

    fn compile(&mut self, source: &PatchedSource) -> Result<SimArtifact, CompileFailure> {
        let program = parse_trace_program(&source.concatenated()).map_err(|e| CompileFailure::new(e.to_string()))?;
        Ok(SimArtifact {
            bytes: program.canonical_bytes(),
            program,
        })
    }

    fn run(&mut self, artifact: &SimArtifact, case: &TestCase, collect_metric: bool) -> Result<RunOutput, RunFailure> {
        let input = std::str::from_utf8(&case.input)
            .map_err(|_| RunFailure::Fault(format!("test case {}: input is not UTF-8", case.id)))?;
        let bindings = Bindings::parse(input).map_err(|e| RunFailure::Fault(format!("test case {}: {e}", case.id)))?;
        let mut cache = Cache::new(self.config.cache);
        let exec = artifact
            .program
            .execute(&bindings, self.config.access_limit, |a| cache.access(a));
        let mut output = String::new();
        for v in &exec.emitted {
            output.push_str(&v.to_string());
            output.push('\n');
        }
        let (exit_status, detail) = match exec.outcome {
            Ok(()) => (0, String::new()),
            Err(RuntimeError::AccessLimit(limit)) => {
                return Err(RunFailure::Timeout(format!("more than {limit} memory accesses")))
            }
            Err(e) => (1, e.to_string()),
        };
        let metric = collect_metric.then(|| self.noisy(cache.stats().misses));
        Ok(RunOutput {
            output: output.into_bytes(),
            exit_status,
            metric,
            detail,
        })
    }

    fn begin_step(&mut self, step: u64) {
        self.step = step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source_model::PatchedFile;

    fn source(text: &str) -> PatchedSource {
        PatchedSource {
            files: vec![PatchedFile {
                path: "p.trace".into(),
                text: text.into(),
            }],
        }
    }

    fn case(input: &str) -> TestCase {
        TestCase::new("c", input, "", 0)
    }

    #[test]
    fn undeclared_array_is_a_compile_error() {
        let err = SimDriver::new(SimDriverConfig::default())
            .compile(&source("loop i 0 4\nload A[i]\nend"))
            .unwrap_err();
        assert!(err.diagnostic.contains("undeclared array"), "{err}");
    }

    #[test]
    fn artifacts_are_stable() {
        let mut d = SimDriver::new(SimDriverConfig::default());
        let text = "array A 64 4\nloop i 0 64\nload A[i]\nend\nemit acc";
        let a = d.compile(&source(text)).unwrap();
        let b = d.compile(&source(text)).unwrap();
        assert_eq!(a.as_ref(), b.as_ref());
    }

    #[test]
    fn single_touch_is_one_miss() {
        let mut d = SimDriver::new(SimDriverConfig::default());
        let art = d.compile(&source("array A 1 4\nload A[0]\nemit acc")).unwrap();
        let out = d.run(&art, &case("seed=1"), true).unwrap();
        assert_eq!(out.metric, Some(1));
        assert_eq!(out.exit_status, 0);
        assert!(d.run(&art, &case("seed=1"), false).unwrap().metric.is_none());
    }

    #[test]
    fn access_limit_times_out() {
        let mut d = SimDriver::new(SimDriverConfig {
            access_limit: 100,
            ..SimDriverConfig::default()
        });
        let art = d.compile(&source("array A 101 4\nloop i 0 101\nload A[i]\nend")).unwrap();
        assert!(matches!(d.run(&art, &case(""), true), Err(RunFailure::Timeout(_))));
    }

    #[test]
    fn runtime_error_is_nonzero_exit() {
        let mut d = SimDriver::new(SimDriverConfig::default());
        let art = d.compile(&source("param n\narray A 4 4\nemit 7\nload A[n]")).unwrap();
        let out = d.run(&art, &case("n=9"), false).unwrap();
        assert_eq!(out.exit_status, 1);
        assert_eq!(out.output, b"7\n");
        assert!(out.detail.contains("out of bounds"));
    }

    #[test]
    fn noise_is_seeded_and_drift_applies() {
        let noise = NoiseConfig {
            seed: 4,
            amplitude: 0.05,
            drift_schedule: vec![(10, 2.0)],
        };
        let cfg = SimDriverConfig {
            noise: Some(noise),
            ..SimDriverConfig::default()
        };
        let text = "array A 16384 4\nloop i 0 16384\nload A[i]\nend";
        let sample = |step: u64| {
            let mut d = SimDriver::new(cfg.clone());
            d.begin_step(step);
            let art = d.compile(&source(text)).unwrap();
            (0..20).map(|_| d.run(&art, &case(""), true).unwrap().metric.unwrap()).collect::<Vec<_>>()
        };
        let before = sample(0);
        assert_eq!(before, sample(0));
        assert!(before.iter().all(|&m| (972..=1076).contains(&m)), "{before:?}");
        assert!(before.iter().any(|&m| m != 1024));
        let after = sample(10);
        assert!(after.iter().all(|&m| (1945..=2151).contains(&m)), "{after:?}");
    }
}

//! Independent reference implementations and demo fixtures shared by the
//! integration tests. Nothing here calls into the code under test except to
//! load fixtures.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use cachegi::cachesim::{Access, CacheStats};
use cachegi::config::{DriverConfig, RunConfig};
use cachegi::drivers::{CompileFailure, Driver, RunFailure, RunOutput, SimDriver, SimDriverConfig};
use cachegi::evaluation::{load_suite, record_expectations, TestCase};
use cachegi::source_model::{ingest_source, PatchedSource, SourceRoster};

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("demo")
}

pub fn demo_config_path() -> PathBuf {
    demo_dir().join("loop_order.toml")
}

pub struct Demo {
    pub config: RunConfig,
    pub sim: SimDriverConfig,
    pub roster: SourceRoster,
    pub suite: Vec<TestCase>,
}

pub fn load_demo() -> Demo {
    let config = RunConfig::load(&demo_config_path()).expect("demo config loads");
    let DriverConfig::Sim(sim) = config.driver.clone() else {
        panic!("demo uses the simulator driver")
    };
    let roster = ingest_source(&config.target.paths, config.target.strip_policy).unwrap();
    let specs = load_suite(&config.suite).unwrap();
    let suite = record_expectations(&mut SimDriver::new(sim.clone()), &roster.original(), specs).unwrap();
    Demo {
        config,
        sim,
        roster,
        suite,
    }
}

/// Fully naive LRU: one flat list of resident lines with last-use stamps.
/// A miss in a full set evicts the resident line of that set with the
/// oldest stamp.
pub struct NaiveLru {
    pub sets: u64,
    pub ways: usize,
    pub line_bytes: u64,
    resident: Vec<(u64, u64)>,
    clock: u64,
    pub stats: CacheStats,
}

impl NaiveLru {
    pub fn new(size_bytes: u64, line_bytes: u64, ways: usize) -> Self {
        Self {
            sets: size_bytes / line_bytes / ways as u64,
            ways,
            line_bytes,
            resident: Vec::new(),
            clock: 0,
            stats: CacheStats::default(),
        }
    }

    fn touch(&mut self, line: u64) {
        self.clock += 1;
        for entry in self.resident.iter_mut() {
            if entry.0 == line {
                entry.1 = self.clock;
                return;
            }
        }
        self.stats.misses += 1;
        let set = line % self.sets;
        let in_set: Vec<usize> = (0..self.resident.len())
            .filter(|&i| self.resident[i].0 % self.sets == set)
            .collect();
        if in_set.len() == self.ways {
            let victim = *in_set.iter().min_by_key(|&&i| self.resident[i].1).unwrap();
            self.resident.remove(victim);
            self.stats.evictions += 1;
        }
        self.resident.push((line, self.clock));
    }

    pub fn access(&mut self, a: Access) {
        self.stats.accesses += 1;
        let lo = a.address / self.line_bytes;
        let hi = (a.address + u64::from(a.size) - 1) / self.line_bytes;
        for line in lo..=hi {
            self.touch(line);
        }
    }
}

/// Two-sided Mann-Whitney p by listing every way to pick which pooled
/// positions belong to the first sample.
pub fn brute_force_mann_whitney(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    // doubled midrank: 2 * (#less) + (#equal) + 1
    let rank2 = |x: f64| -> i64 {
        let less = pooled.iter().filter(|&&y| y < x).count() as i64;
        let equal = pooled.iter().filter(|&&y| y == x).count() as i64;
        2 * less + equal + 1
    };
    let ranks: Vec<i64> = pooled.iter().map(|&x| rank2(x)).collect();
    let na = a.len();
    let nb = b.len();
    let u2_of = |mask: u32| -> i64 {
        let r: i64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        r - (na * (na + 1)) as i64
    };
    let observed = u2_of((1u32 << na) - 1);
    let centre = (na * nb) as i64;
    let (mut total, mut extreme) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        total += 1;
        if (u2_of(mask) - centre).abs() >= (observed - centre).abs() {
            extreme += 1;
        }
    }
    (observed as f64 / 2.0, extreme as f64 / total as f64)
}

/// Wraps a driver and records, per artifact, the steps in which it was
/// measured (run with `collect_metric`). Warm-up runs happen at step 0.
pub struct Recording<D> {
    pub inner: D,
    pub step: u64,
    pub compiles: u64,
    pub measured_in: HashMap<Vec<u8>, BTreeSet<u64>>,
}

impl<D> Recording<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            step: 0,
            compiles: 0,
            measured_in: HashMap::new(),
        }
    }
}

impl<D: Driver> Driver for Recording<D> {
    type Artifact = D::Artifact;

    fn compile(&mut self, source: &PatchedSource) -> Result<D::Artifact, CompileFailure> {
        self.compiles += 1;
        self.inner.compile(source)
    }

    fn run(&mut self, artifact: &D::Artifact, case: &TestCase, collect_metric: bool) -> Result<RunOutput, RunFailure> {
        if collect_metric {
            self.measured_in
                .entry(artifact.as_ref().to_vec())
                .or_default()
                .insert(self.step);
        }
        self.inner.run(artifact, case, collect_metric)
    }

    fn begin_step(&mut self, step: u64) {
        self.step = step;
        self.inner.begin_step(step);
    }
}

/// Artifacts other than the original that were measured in more than one
/// step, plus steps outside warm-up and sentinel probes in which the
/// original was measured.
pub fn tabu_violations(rec: &Recording<SimDriver>, original: &[u8], sentinel_every: u64) -> Vec<String> {
    let mut out = Vec::new();
    for (bytes, steps) in &rec.measured_in {
        if bytes.as_slice() == original {
            for &s in steps {
                if s != 0 && (sentinel_every == 0 || s % sentinel_every != 0) {
                    out.push(format!("original measured at step {s}"));
                }
            }
        } else if steps.len() > 1 {
            out.push(format!("artifact of {} bytes measured at steps {steps:?}", bytes.len()));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub enum Behaviour {
    Pass,
    WrongOutput,
    WrongExit,
    Timeout,
    Fault,
}

/// Counts every call; case `i` behaves as `script[i]` and measures `metrics[i]`.
pub struct Counting {
    pub compile_ok: bool,
    pub script: Vec<Behaviour>,
    pub metrics: Vec<u64>,
    pub runs: usize,
    pub metric_runs: usize,
}

impl Driver for Counting {
    type Artifact = Vec<u8>;

    fn compile(&mut self, _: &PatchedSource) -> Result<Vec<u8>, CompileFailure> {
        self.compile_ok.then(|| b"artifact".to_vec()).ok_or_else(|| CompileFailure::new("nope"))
    }

    fn run(&mut self, _: &Vec<u8>, case: &TestCase, collect_metric: bool) -> Result<RunOutput, RunFailure> {
        let i: usize = case.id.parse().unwrap();
        if collect_metric {
            self.metric_runs += 1;
        } else {
            self.runs += 1;
        }
        let ok = RunOutput {
            output: case.expected_output.clone(),
            exit_status: case.expected_exit,
            metric: Some(self.metrics[i]),
            detail: String::new(),
        };
        match self.script[i] {
            Behaviour::Pass => Ok(ok),
            Behaviour::WrongOutput => Ok(RunOutput {
                output: b"garbage".to_vec(),
                ..ok
            }),
            Behaviour::WrongExit => Ok(RunOutput {
                exit_status: case.expected_exit + 1,
                ..ok
            }),
            Behaviour::Timeout => Err(RunFailure::Timeout("slow".into())),
            Behaviour::Fault => Err(RunFailure::Fault("crash".into())),
        }
    }
}

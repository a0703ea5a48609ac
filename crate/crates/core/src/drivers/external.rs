//! Wraps a user's build and run commands.
//!
//! Every compile gets a fresh scratch directory `work/<step>/` (suffixed when
//! a step compiles more than once). Templates are run through `sh -c` with
//! these placeholders:
//!
//! | placeholder  | meaning                                        |
//! |--------------|------------------------------------------------|
//! | `{src_dir}`  | directory holding the patched sources          |
//! | `{artifact}` | path the compile command must produce          |
//! | `{input}`    | file holding the test case input               |
//! | `{counters}` | file the counter tool should write (optional)  |
//!
//! If the counters file is not written, the metric is looked for in stderr,
//! where `perf stat -x,` prints by default.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{parse_counter_output, CompileFailure, CounterFormat, Driver, RunFailure, RunOutput};
use crate::evaluation::TestCase;
use crate::source_model::PatchedSource;

/// Size of the data array touched before each measured run.
pub const CACHE_THRASH_BYTES: usize = 32 * 1024;

const CACHE_THRASH_HEADER: &str = r#"/* Evict the L1 data cache by writing and reading a fixed array. */
#ifndef CACHEGI_CACHE_THRASH_H
#define CACHEGI_CACHE_THRASH_H
static volatile char cachegi_thrash_buf[32768];
static inline void cachegi_cache_thrash(void) {
  unsigned long sum = 0;
  for (unsigned i = 0; i < sizeof cachegi_thrash_buf; i++) cachegi_thrash_buf[i] = (char)i;
  for (unsigned i = 0; i < sizeof cachegi_thrash_buf; i++) sum += cachegi_thrash_buf[i];
  (void)sum;
}
#endif
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalDriverConfig {
    /// Should stop at the first diagnostic, e.g. `gcc -fmax-errors=1`.
    pub compile_cmd: String,
    pub run_cmd: String,
    pub metric_name: String,
    #[serde(default)]
    pub counter_format: CounterFormat,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_compile_timeout_ms")]
    pub compile_timeout_ms: u64,
    /// Writes `cache_thrash.h` into the source directory and sets
    /// `CACHEGI_CACHE_THRASH=32768` for runs; the harness decides whether to
    /// call it before its measured region.
    #[serde(default)]
    pub cache_thrash: bool,
    #[serde(default = "default_artifact_name")]
    pub artifact_name: String,
    /// Environment variables passed through to commands. Nothing else is.
    #[serde(default = "default_env_allow")]
    pub env_allow: Vec<String>,
    /// Scratch root. Not read from config files; the CLI points it inside
    /// the output directory or a temporary directory.
    #[serde(skip, default = "default_work_dir")]
    pub work_dir: PathBuf,
}

fn default_timeout_ms() -> u64 {
    10_000
}
fn default_compile_timeout_ms() -> u64 {
    120_000
}
fn default_artifact_name() -> String {
    "prog".into()
}
fn default_env_allow() -> Vec<String> {
    vec!["PATH".into()]
}
fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

impl ExternalDriverConfig {
    pub fn new(compile_cmd: &str, run_cmd: &str, metric_name: &str) -> Self {
        Self {
            compile_cmd: compile_cmd.into(),
            run_cmd: run_cmd.into(),
            metric_name: metric_name.into(),
            counter_format: CounterFormat::default(),
            timeout_ms: default_timeout_ms(),
            compile_timeout_ms: default_compile_timeout_ms(),
            cache_thrash: false,
            artifact_name: default_artifact_name(),
            env_allow: default_env_allow(),
            work_dir: default_work_dir(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExternalArtifact {
    bytes: Vec<u8>,
    path: PathBuf,
    dir: PathBuf,
}

impl ExternalArtifact {
    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AsRef<[u8]> for ExternalArtifact {
    fn as_ref(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug)]
pub struct ExternalDriver {
    config: ExternalDriverConfig,
    step: u64,
    runs: u64,
}

enum Finished {
    Exited(i32),
    TimedOut,
}

impl ExternalDriver {
    pub fn new(config: ExternalDriverConfig) -> Self {
        Self { config, step: 0, runs: 0 }
    }

    pub fn config(&self) -> &ExternalDriverConfig {
        &self.config
    }

    fn fresh_dir(&self) -> io::Result<PathBuf> {
        let root = &self.config.work_dir;
        fs::create_dir_all(root)?;
        let mut dir = root.join(self.step.to_string());
        let mut n = 0;
        while dir.exists() {
            n += 1;
            dir = root.join(format!("{}-{n}", self.step));
        }
        fs::create_dir(&dir)?;
        Ok(dir)
    }

    fn shell(&self, script: &str, cwd: &Path, stdout: &Path, stderr: &Path, timeout_ms: u64) -> io::Result<Finished> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(script)
            .current_dir(cwd)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(fs::File::create(stdout)?)
            .stderr(fs::File::create(stderr)?);
        for key in &self.config.env_allow {
            if let Some(v) = std::env::var_os(key) {
                cmd.env(key, v);
            }
        }
        if self.config.cache_thrash {
            cmd.env("CACHEGI_CACHE_THRASH", CACHE_THRASH_BYTES.to_string());
        }
        let mut child = cmd.spawn()?;
        match child.wait_timeout(Duration::from_millis(timeout_ms))? {
            Some(status) => Ok(Finished::Exited(status.code().unwrap_or(-1))),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                Ok(Finished::TimedOut)
            }
        }
    }
}

fn fill(template: &str, pairs: &[(&str, &Path)]) -> String {
    pairs.iter().fold(template.to_string(), |acc, (key, path)| {
        acc.replace(&format!("{{{key}}}"), &path.to_string_lossy())
    })
}

fn first_diagnostic(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("no diagnostic output")
        .to_string()
}

/// Relative paths keep their directories; absolute ones keep the file name.
fn relative_target(path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        PathBuf::from(p.file_name().unwrap_or(p.as_os_str()))
    } else {
        p.to_path_buf()
    }
}

impl Driver for ExternalDriver {
    type Artifact = ExternalArtifact;

    fn compile(&mut self, source: &PatchedSource) -> Result<ExternalArtifact, CompileFailure> {
        let io_err = |e: io::Error| CompileFailure::new(format!("scratch directory: {e}"));
        let dir = self.fresh_dir().map_err(io_err)?;
        let src_dir = dir.join("src");
        fs::create_dir_all(&src_dir).map_err(io_err)?;
        for file in &source.files {
            let dest = src_dir.join(relative_target(&file.path));
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
            fs::write(&dest, &file.text).map_err(io_err)?;
        }
        if self.config.cache_thrash {
            fs::write(src_dir.join("cache_thrash.h"), CACHE_THRASH_HEADER).map_err(io_err)?;
        }
        let artifact = dir.join(&self.config.artifact_name);
        let script = fill(&self.config.compile_cmd, &[("src_dir", &src_dir), ("artifact", &artifact)]);
        let (out, err) = (dir.join("compile.out"), dir.join("compile.err"));
        match self
            .shell(&script, &dir, &out, &err, self.config.compile_timeout_ms)
            .map_err(io_err)?
        {
            Finished::TimedOut => return Err(CompileFailure::new("timeout")),
            Finished::Exited(0) => {}
            Finished::Exited(code) => {
                let stderr = fs::read_to_string(&err).unwrap_or_default();
                let stdout = fs::read_to_string(&out).unwrap_or_default();
                let text = if stderr.trim().is_empty() { stdout } else { stderr };
                return Err(CompileFailure::new(format!("exit {code}: {}", first_diagnostic(&text))));
            }
        }
        let bytes = fs::read(&artifact)
            .map_err(|e| CompileFailure::new(format!("artifact {} not produced: {e}", artifact.display())))?;
        Ok(ExternalArtifact {
            bytes,
            path: artifact,
            dir,
        })
    }

    fn run(&mut self, artifact: &ExternalArtifact, case: &TestCase, collect_metric: bool) -> Result<RunOutput, RunFailure> {
        self.runs += 1;
        let n = self.runs;
        let dir = &artifact.dir;
        let fault = |e: io::Error| RunFailure::Fault(format!("scratch I/O: {e}"));
        let input = dir.join(format!("input-{n}"));
        let counters = dir.join(format!("counters-{n}"));
        let (out, err) = (dir.join(format!("stdout-{n}")), dir.join(format!("stderr-{n}")));
        fs::write(&input, &case.input).map_err(fault)?;
        let script = fill(
            &self.config.run_cmd,
            &[("artifact", &artifact.path), ("input", &input), ("counters", &counters)],
        );
        let exit_status = match self.shell(&script, dir, &out, &err, self.config.timeout_ms).map_err(fault)? {
            Finished::TimedOut => return Err(RunFailure::Timeout(format!("{} ms", self.config.timeout_ms))),
            Finished::Exited(code) => code,
        };
        let output = fs::read(&out).map_err(fault)?;
        let detail = fs::read_to_string(&err).unwrap_or_default();
        let metric = if collect_metric {
            let text = fs::read_to_string(&counters).unwrap_or_else(|_| detail.clone());
            let value = parse_counter_output(&text, self.config.counter_format, &self.config.metric_name)
                .map_err(|e| RunFailure::Fault(format!("counter parse: {e}")))?;
            Some(value)
        } else {
            None
        };
        let _ = fs::remove_file(&input);
        Ok(RunOutput {
            output,
            exit_status,
            metric,
            detail,
        })
    }

    fn begin_step(&mut self, step: u64) {
        self.step = step;
    }
}

//! Command-line subcommands. Each `cmd_*` function is usable on its own; the
//! binary only parses arguments and maps results to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cachesim::{parse_trace_dump, parse_trace_program, simulate, Bindings, CacheConfig, CacheStats};
use crate::config::{DriverConfig, RunConfig};
use crate::drivers::{
    CompileFailure, Driver, ExternalArtifact, ExternalDriver, RunFailure, RunOutput, SimArtifact, SimDriver,
};
use crate::evaluation::{load_suite, record_expectations, Category, TestCase};
use crate::search_engine::{local_search, minify, warm_up, Accounting, StepRecord, TabuStore};
use crate::source_model::{apply_patch, format_patch, ingest_source, parse_patch, Patch, PatchedSource, SourceRoster};
use crate::stats::{coupon_budget, coverage_probability, mann_whitney, mean, quartile1, DriftReport, MannWhitney};

#[derive(Debug, Parser)]
#[command(name = "cachegi", version, about = "Line-level genetic improvement for fewer L1 data-cache misses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Warm up, search, and write the best patch plus logs to output_dir.
    Search(SearchArgs),
    /// Check a patch on the holdout suite against the original program.
    Validate(ValidateArgs),
    /// Coupon-collector step budget for N mutable lines.
    Budget(BudgetArgs),
    /// Write the patched sources to a directory.
    Apply(ApplyArgs),
    /// Drop edits that do not contribute to a patch's fitness.
    Minify(MinifyArgs),
    /// Re-render accounting and the fitness trajectory from a run log.
    Report(ReportArgs),
    /// Run a trace dump or trace program through the cache simulator.
    SimulateTrace(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    pub config: PathBuf,
    /// Replace an existing, non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<u64>,
    /// Overrides output_dir from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

impl SearchArgs {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            force: false,
            seed: None,
            budget: None,
            output_dir: None,
            quiet: true,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    pub config: PathBuf,
    pub patch: PathBuf,
    /// Metric repetitions per holdout case; defaults to search.repeats.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Significance level for the cache verdict.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Where to write the JSON report (default: <output_dir>/validation.json).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    pub lines: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    pub config: PathBuf,
    pub patch: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MinifyArgs {
    pub config: PathBuf,
    pub patch: PathBuf,
    /// Write the minified patch here as well as to stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    pub log: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// A dump (`R 0x40 4` per line) or a trace program.
    pub file: PathBuf,
    /// Parameter bindings for programs, e.g. "seed=3 n=64".
    #[arg(long, default_value = "")]
    pub bindings: String,
    #[arg(long, default_value_t = 32768)]
    pub size: u64,
    #[arg(long, default_value_t = 64)]
    pub line: u64,
    #[arg(long, default_value_t = 8)]
    pub ways: u64,
    #[arg(long, default_value_t = 100_000_000)]
    pub access_limit: u64,
}

/// Runs one parsed command line, printing human-readable output. Returns
/// the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Search(args) => {
            let summary = cmd_search(&args)?;
            emit(&format!("{}\n", summary.render()));
            Ok(0)
        }
        Command::Validate(args) => {
            let report = cmd_validate(&args)?;
            emit(&report.render());
            Ok(i32::from(report.functional_failures() > 0))
        }
        Command::Budget(args) => {
            emit(&cmd_budget(args.lines, args.confidence)?);
            Ok(0)
        }
        Command::Apply(args) => {
            for path in cmd_apply(&args)? {
                emit(&format!("{}\n", path.display()));
            }
            Ok(0)
        }
        Command::Minify(args) => {
            emit(&format!("{}\n", cmd_minify(&args)?));
            Ok(0)
        }
        Command::Report(args) => {
            emit(&cmd_report(&args.log)?);
            Ok(0)
        }
        Command::SimulateTrace(args) => {
            emit(&cmd_simulate_trace(&args)?.render());
            Ok(0)
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

/// Either backend behind one type, so commands need not be generic.
// one driver lives per session, so the size gap costs nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug)]
pub enum AnyDriver {
    Sim(SimDriver),
    External(ExternalDriver),
}

#[derive(Debug, Clone)]
pub enum AnyArtifact {
    Sim(SimArtifact),
    External(ExternalArtifact),
}

impl AsRef<[u8]> for AnyArtifact {
    fn as_ref(&self) -> &[u8] {
        match self {
            AnyArtifact::Sim(a) => a.as_ref(),
            AnyArtifact::External(a) => a.as_ref(),
        }
    }
}

impl AnyDriver {
    pub fn from_config(config: &DriverConfig, work_dir: &Path) -> Self {
        match config {
            DriverConfig::Sim(c) => AnyDriver::Sim(SimDriver::new(c.clone())),
            DriverConfig::External(c) => {
                let mut c = c.clone();
                c.work_dir = work_dir.to_path_buf();
                AnyDriver::External(ExternalDriver::new(c))
            }
        }
    }
}

impl Driver for AnyDriver {
    type Artifact = AnyArtifact;

    fn compile(&mut self, source: &PatchedSource) -> Result<AnyArtifact, CompileFailure> {
        match self {
            AnyDriver::Sim(d) => d.compile(source).map(AnyArtifact::Sim),
            AnyDriver::External(d) => d.compile(source).map(AnyArtifact::External),
        }
    }

    fn run(&mut self, artifact: &AnyArtifact, case: &TestCase, collect_metric: bool) -> Result<RunOutput, RunFailure> {
        match (self, artifact) {
            (AnyDriver::Sim(d), AnyArtifact::Sim(a)) => d.run(a, case, collect_metric),
            (AnyDriver::External(d), AnyArtifact::External(a)) => d.run(a, case, collect_metric),
            _ => Err(RunFailure::Fault("artifact built by a different driver".into())),
        }
    }

    fn begin_step(&mut self, step: u64) {
        match self {
            AnyDriver::Sim(d) => d.begin_step(step),
            AnyDriver::External(d) => d.begin_step(step),
        }
    }
}

/// Everything a command needs after loading a config.
struct Session {
    config: RunConfig,
    roster: SourceRoster,
    driver: AnyDriver,
    _scratch: Option<tempfile::TempDir>,
}

impl Session {
    /// `work_dir` of `None` uses a temporary scratch directory.
    fn open(config: RunConfig, work_dir: Option<PathBuf>) -> Result<Self> {
        let roster = ingest_source(&config.target.paths, config.target.strip_policy)?;
        let (work, scratch) = match work_dir {
            Some(w) => (w, None),
            None => {
                let t = tempfile::Builder::new().prefix("cachegi-").tempdir()?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let driver = AnyDriver::from_config(&config.driver, &work);
        Ok(Self {
            config,
            roster,
            driver,
            _scratch: scratch,
        })
    }

    fn suite(&mut self, path: &Path) -> Result<Vec<TestCase>> {
        let specs = load_suite(path)?;
        Ok(record_expectations(&mut self.driver, &self.roster.original(), specs)?)
    }

    fn read_patch(&self, path: &Path) -> Result<Patch> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read patch {}", path.display()))?;
        let patch = parse_patch(&text, &self.roster).with_context(|| format!("patch {}", path.display()))?;
        apply_patch(&self.roster, &patch).with_context(|| format!("patch {}", path.display()))?;
        Ok(patch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub output_dir: PathBuf,
    pub best_patch: String,
    pub best_relative_fitness: f64,
    pub best_summarized_metric: Option<f64>,
    pub baseline: f64,
    pub warmup_variance: f64,
    pub budget_steps: u64,
    pub mutable_lines: usize,
    pub seed: u64,
    pub accounting: Accounting,
    pub percentages: Vec<(Category, f64)>,
    pub duplicates: u64,
    pub tabu_artifacts: u64,
    pub sentinels: Vec<(u64, f64)>,
    pub drift: Option<DriftReport>,
    pub elapsed_ms: u64,
}

impl SearchSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "output directory: {}", self.output_dir.display());
        let _ = writeln!(
            out,
            "mutable lines: {}, budget: {} steps, seed: {}",
            self.mutable_lines, self.budget_steps, self.seed
        );
        let _ = writeln!(out, "warm-up baseline: {} (variance {})", self.baseline, self.warmup_variance);
        let patch = if self.best_patch.is_empty() { "<empty>" } else { &self.best_patch };
        let _ = writeln!(out, "best patch: {patch}");
        let _ = writeln!(out, "best relative fitness: {:.4}", self.best_relative_fitness);
        out.push_str(&self.accounting.render());
        if let Some(d) = &self.drift {
            let _ = writeln!(
                out,
                "drift: {} (worst ratio {:.4}{})",
                if d.drifting { "detected" } else { "none" },
                d.worst_ratio,
                d.onset_step.map(|s| format!(", onset at step {s}")).unwrap_or_default()
            );
        }
        let _ = write!(out, "elapsed: {} ms", self.elapsed_ms);
        out
    }
}

fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .with_context(|| format!("cannot read output directory {}", dir.display()))?
            .next()
            .is_some();
        if non_empty {
            if !force {
                bail!("output directory {} is not empty; pass --force to replace it", dir.display());
            }
            fs::remove_dir_all(dir).with_context(|| format!("cannot clear {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

/// Writes `best.patch`, `run_log.jsonl`, `warmup.json`, `report.json`,
/// `accounting.txt` and the `tabu/` store into the output directory.
pub fn cmd_search(args: &SearchArgs) -> Result<SearchSummary> {
    let started = std::time::Instant::now();
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.search.seed = seed;
    }
    if let Some(budget) = args.budget {
        config.search.budget_steps = Some(budget);
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    let out = config.output_dir.clone();
    prepare_output_dir(&out, args.force)?;
    let mut session = Session::open(config, Some(out.join("work")))?;
    let suite_path = session.config.suite.clone();
    let suite = session.suite(&suite_path)?;
    let Session {
        config,
        roster,
        driver,
        ..
    } = &mut session;

    let mut tabu = TabuStore::with_dir(out.join("tabu"))?;
    let warm = warm_up(roster, &suite, driver, &config.search, Some(&mut tabu))?;
    write_json(&out.join("warmup.json"), &warm)?;
    if !args.quiet {
        eprintln!("warm-up baseline {} over {} runs", warm.baseline, warm.summarized_metrics.len());
    }

    let log_path = out.join("run_log.jsonl");
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    let mut log_error = None;
    let quiet = args.quiet;
    let mut sink = |r: &StepRecord| {
        if log_error.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("step records serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_error = Some(e);
        }
        if !quiet && !r.sentinel {
            eprintln!("step {:>6} {:<18} {}", r.step, r.status.to_string(), r.patch);
        }
    };
    let result = local_search(
        roster,
        &suite,
        driver,
        &config.search,
        &config.operators.weights,
        &warm,
        &mut tabu,
        &mut sink,
    );
    drop(log);
    if let Some(e) = log_error {
        return Err(anyhow!(e).context(format!("cannot write {}", log_path.display())));
    }
    let result = result?;

    fs::write(out.join("best.patch"), format!("{}\n", result.best_patch_text))?;
    let total = result.accounting.total();
    let summary = SearchSummary {
        output_dir: out.clone(),
        best_patch: result.best_patch_text.clone(),
        best_relative_fitness: result.best_fitness.relative_fitness.unwrap_or(1.0),
        best_summarized_metric: result.best_fitness.summarized_metric,
        baseline: warm.baseline,
        warmup_variance: warm.variance,
        budget_steps: result.budget_steps,
        mutable_lines: roster.mutable_points().len(),
        seed: config.search.seed,
        percentages: Category::ALL
            .iter()
            .map(|&c| (c, 100.0 * result.accounting.count(c) as f64 / total.max(1) as f64))
            .collect(),
        accounting: result.accounting.clone(),
        duplicates: result.duplicates,
        tabu_artifacts: tabu.stored(),
        sentinels: result.sentinels.clone(),
        drift: result.drift.clone(),
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    write_json(&out.join("report.json"), &summary)?;
    fs::write(out.join("accounting.txt"), result.accounting.render())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseValidation {
    pub id: String,
    pub passed: bool,
    pub detail: String,
    pub original_samples: Vec<u64>,
    pub patched_samples: Vec<u64>,
    pub original_q1: Option<f64>,
    pub patched_q1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub patch: String,
    pub repeats: usize,
    pub alpha: f64,
    pub cases: Vec<CaseValidation>,
    pub functional_passes: usize,
    pub total_cases: usize,
    pub original_q1_sum: f64,
    pub patched_q1_sum: f64,
    pub q1_change_percent: f64,
    pub original_mean: Option<f64>,
    pub patched_mean: Option<f64>,
    pub mean_change_percent: Option<f64>,
    /// Over per-case Q1s of the cases both variants completed.
    pub mann_whitney: Option<MannWhitney>,
    pub functional_verdict: String,
    pub cache_verdict: String,
    pub cache_improvement_generalises: bool,
}

impl ValidationReport {
    pub fn functional_failures(&self) -> usize {
        self.total_cases - self.functional_passes
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let patch = if self.patch.is_empty() { "<empty>" } else { &self.patch };
        let _ = writeln!(out, "patch: {patch}");
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>12} {:>12}",
            "case", "pass", "orig Q1", "patched Q1"
        );
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v}"));
        for c in &self.cases {
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>12} {:>12}",
                c.id,
                if c.passed { "yes" } else { "NO" },
                cell(c.original_q1),
                cell(c.patched_q1)
            );
        }
        for c in self.cases.iter().filter(|c| !c.passed) {
            let _ = writeln!(out, "FAILED {}: {}", c.id, c.detail);
        }
        let _ = writeln!(
            out,
            "Q1 total: original {} patched {} ({:+.2}%)",
            self.original_q1_sum, self.patched_q1_sum, self.q1_change_percent
        );
        if let (Some(o), Some(p), Some(pct)) = (self.original_mean, self.patched_mean, self.mean_change_percent) {
            let _ = writeln!(out, "mean per run: original {o:.2} patched {p:.2} ({pct:+.2}%)");
        }
        if let Some(mw) = &self.mann_whitney {
            let _ = writeln!(out, "Mann-Whitney U = {}, two-sided p = {:.3e} ({:?})", mw.u, mw.p_two_sided, mw.method);
        }
        let _ = writeln!(out, "{}", self.functional_verdict);
        let _ = writeln!(out, "{}", self.cache_verdict);
        out
    }
}

fn change_percent(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        100.0 * (after - before) / before
    }
}

/// Functional check of every holdout case, then `repeats` metric runs of
/// both variants on each case that passed.
pub fn cmd_validate(args: &ValidateArgs) -> Result<ValidationReport> {
    let config = RunConfig::load(&args.config)?;
    let holdout = config
        .holdout
        .clone()
        .ok_or_else(|| anyhow!("config {} has no holdout suite", args.config.display()))?;
    let repeats = args.repeats.unwrap_or(config.search.repeats);
    if repeats == 0 {
        bail!("repeats must be at least 1");
    }
    let out_dir = config.output_dir.clone();
    let mut session = Session::open(config, None)?;
    let patch = session.read_patch(&args.patch)?;
    let suite = session.suite(&holdout)?;
    let Session { roster, driver, .. } = &mut session;

    let original = driver
        .compile(&roster.original())
        .map_err(|e| anyhow!("original program: {e}"))?;
    let patched = driver.compile(&apply_patch(roster, &patch)?);

    let measure = |driver: &mut AnyDriver, artifact: &AnyArtifact, case: &TestCase| -> Result<Vec<u64>, String> {
        (0..repeats)
            .map(|_| match driver.run(artifact, case, true) {
                Ok(RunOutput { metric: Some(m), .. }) => Ok(m),
                Ok(_) => Err("no metric reported".to_string()),
                Err(e) => Err(e.to_string()),
            })
            .collect()
    };
    let q1 = |s: &[u64]| quartile1(&s.iter().map(|&v| v as f64).collect::<Vec<_>>()).ok();

    let mut cases = Vec::with_capacity(suite.len());
    for case in &suite {
        let original_samples =
            measure(driver, &original, case).map_err(|e| anyhow!("original program on case {}: {e}", case.id))?;
        let mut row = CaseValidation {
            id: case.id.clone(),
            passed: false,
            detail: String::new(),
            original_q1: q1(&original_samples),
            original_samples,
            patched_samples: Vec::new(),
            patched_q1: None,
        };
        match &patched {
            Err(e) => row.detail = e.to_string(),
            Ok(artifact) => match driver.run(artifact, case, false) {
                Err(e) => row.detail = e.to_string(),
                Ok(o) if o.exit_status != case.expected_exit => {
                    row.detail = format!("exit status {} (expected {})", o.exit_status, case.expected_exit)
                }
                Ok(o) if o.output != case.expected_output => row.detail = "output differs".into(),
                Ok(_) => match measure(driver, artifact, case) {
                    Ok(s) => {
                        row.passed = true;
                        row.patched_q1 = q1(&s);
                        row.patched_samples = s;
                    }
                    Err(e) => row.detail = e,
                },
            },
        }
        cases.push(row);
    }

    let both: Vec<&CaseValidation> = cases.iter().filter(|c| c.patched_q1.is_some()).collect();
    let orig_q1s: Vec<f64> = both.iter().filter_map(|c| c.original_q1).collect();
    let patched_q1s: Vec<f64> = both.iter().filter_map(|c| c.patched_q1).collect();
    let original_q1_sum: f64 = orig_q1s.iter().sum();
    let patched_q1_sum: f64 = patched_q1s.iter().sum();
    let flat = |f: fn(&CaseValidation) -> &Vec<u64>| -> Vec<f64> {
        both.iter().flat_map(|c| f(c).iter().map(|&v| v as f64)).collect()
    };
    let original_mean = mean(&flat(|c| &c.original_samples));
    let patched_mean = mean(&flat(|c| &c.patched_samples));
    let mw = if both.is_empty() {
        None
    } else {
        Some(mann_whitney(&orig_q1s, &patched_q1s)?)
    };

    let total_cases = cases.len();
    let functional_passes = cases.iter().filter(|c| c.passed).count();
    let functional_verdict = if functional_passes == total_cases {
        format!("PASS: functionally generalises ({functional_passes}/{total_cases} holdout cases)")
    } else {
        format!(
            "FAIL: does not functionally generalise ({functional_passes}/{total_cases} holdout cases pass)"
        )
    };
    let improved = patched_q1_sum < original_q1_sum;
    let significant = mw.is_some_and(|m| m.p_two_sided < args.alpha);
    let cache_improvement_generalises = improved && significant;
    let cache_verdict = match (&mw, cache_improvement_generalises) {
        (None, _) => "cache improvement not measured (no holdout case passed)".to_string(),
        (Some(m), true) => format!(
            "cache improvement generalises ({:+.2}% Q1 misses, p = {:.3e} < {})",
            change_percent(original_q1_sum, patched_q1_sum),
            m.p_two_sided,
            args.alpha
        ),
        (Some(m), false) => format!(
            "cache improvement does not generalise ({:+.2}% Q1 misses, p = {:.3e}, alpha {})",
            change_percent(original_q1_sum, patched_q1_sum),
            m.p_two_sided,
            args.alpha
        ),
    };
    let report = ValidationReport {
        patch: format_patch(&patch, roster),
        repeats,
        alpha: args.alpha,
        functional_passes,
        total_cases,
        q1_change_percent: change_percent(original_q1_sum, patched_q1_sum),
        original_q1_sum,
        patched_q1_sum,
        mean_change_percent: original_mean.zip(patched_mean).map(|(o, p)| change_percent(o, p)),
        original_mean,
        patched_mean,
        mann_whitney: mw,
        functional_verdict,
        cache_verdict,
        cache_improvement_generalises,
        cases,
    };
    let json_path = match &args.json {
        Some(p) => p.clone(),
        None => {
            fs::create_dir_all(&out_dir)?;
            out_dir.join("validation.json")
        }
    };
    write_json(&json_path, &report)?;
    Ok(report)
}

/// The budget followed by a coverage curve at multiples of it.
pub fn cmd_budget(lines: usize, confidence: f64) -> Result<String> {
    let budget = coupon_budget(lines, confidence)?;
    let mut out = format!("{budget}\n");
    let _ = writeln!(out, "{:>10} {:>12}", "steps", "coverage");
    for frac in [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0] {
        let t = (budget as f64 * frac).round() as u64;
        let _ = writeln!(out, "{:>10} {:>12.6}", t, coverage_probability(lines, t));
    }
    Ok(out)
}

/// Longest directory prefix shared by all paths.
fn common_parent(paths: &[PathBuf]) -> PathBuf {
    let mut prefix: PathBuf = paths[0].parent().map(Path::to_path_buf).unwrap_or_default();
    for p in &paths[1..] {
        while !p.starts_with(&prefix) {
            if !prefix.pop() {
                break;
            }
        }
    }
    prefix
}

/// Writes the patched files under `out_dir`, keeping their layout relative
/// to the deepest directory common to all target files.
pub fn cmd_apply(args: &ApplyArgs) -> Result<Vec<PathBuf>> {
    let config = RunConfig::load(&args.config)?;
    let roster = ingest_source(&config.target.paths, config.target.strip_policy)?;
    let text = fs::read_to_string(&args.patch).with_context(|| format!("cannot read patch {}", args.patch.display()))?;
    let patch = parse_patch(&text, &roster).with_context(|| format!("patch {}", args.patch.display()))?;
    let patched = apply_patch(&roster, &patch)?;
    let root = common_parent(&config.target.paths);
    let mut written = Vec::new();
    for (file, path) in patched.files.iter().zip(&config.target.paths) {
        let rel = path.strip_prefix(&root).unwrap_or(path);
        let dest = args.out_dir.join(rel);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&dest, &file.text).with_context(|| format!("cannot write {}", dest.display()))?;
        written.push(dest);
    }
    Ok(written)
}

/// Warms up on the training suite, then minifies. Returns the patch text.
pub fn cmd_minify(args: &MinifyArgs) -> Result<String> {
    let config = RunConfig::load(&args.config)?;
    let mut session = Session::open(config, None)?;
    let patch = session.read_patch(&args.patch)?;
    let suite_path = session.config.suite.clone();
    let suite = session.suite(&suite_path)?;
    let Session {
        config,
        roster,
        driver,
        ..
    } = &mut session;
    let warm = warm_up(roster, &suite, driver, &config.search, None)?;
    let reduced = minify(&patch, roster, &suite, driver, &config.search, warm.baseline)?;
    let text = format_patch(&reduced, roster);
    if let Some(path) = &args.output {
        fs::write(path, format!("{text}\n")).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(text)
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read run log {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

/// Accounting, one row per search step with the best relative fitness so
/// far, and the drift probes.
pub fn cmd_report(log_path: &Path) -> Result<String> {
    let records = read_log(log_path)?;
    let mut out = Accounting::from_log(&records).render();
    let _ = writeln!(
        out,
        "\n{:>7} {:<18} {:>12} {:>10} {:>10}  patch",
        "step", "status", "metric", "rel", "best"
    );
    let mut best = 1.0f64;
    let num = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    for r in records.iter().filter(|r| !r.sentinel) {
        if r.status.is_ok() {
            if let Some(rel) = r.rel_fitness {
                best = best.min(rel);
            }
        }
        let _ = writeln!(
            out,
            "{:>7} {:<18} {:>12} {:>10} {:>10.4}  {}",
            r.step,
            r.status.to_string(),
            num(r.metric, 1),
            num(r.rel_fitness, 4),
            best,
            r.patch
        );
    }
    let probes: Vec<&StepRecord> = records.iter().filter(|r| r.sentinel).collect();
    if !probes.is_empty() {
        let _ = writeln!(out, "\nsentinel probes (empty patch):");
        for r in probes {
            let _ = writeln!(out, "{:>7} {:>12} {:>10}", r.step, num(r.metric, 1), num(r.rel_fitness, 4));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub config: CacheConfig,
    pub stats: CacheStats,
    /// Present for trace programs.
    pub emitted: Option<Vec<i64>>,
}

impl SimulationSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "accesses {}\nmisses {}\nevictions {}\n",
            self.stats.accesses, self.stats.misses, self.stats.evictions
        );
        if let Some(values) = &self.emitted {
            for v in values {
                let _ = writeln!(out, "emit {v}");
            }
        }
        out
    }
}

/// Dumps are recognised by their first significant line starting with `R`
/// or `W` followed by an address; anything else is parsed as a program.
pub fn cmd_simulate_trace(args: &SimulateArgs) -> Result<SimulationSummary> {
    let config = CacheConfig::new(args.size, args.line, args.ways)?;
    let text = fs::read_to_string(&args.file).with_context(|| format!("cannot read {}", args.file.display()))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    let is_dump = first.parse::<crate::cachesim::Access>().is_ok();
    if is_dump {
        let accesses = parse_trace_dump(&text).map_err(|e| anyhow!("{}: {e}", args.file.display()))?;
        return Ok(SimulationSummary {
            config,
            stats: simulate(&config, accesses),
            emitted: None,
        });
    }
    let program = parse_trace_program(&text).map_err(|e| anyhow!("{}: {e}", args.file.display()))?;
    let bindings = Bindings::parse(&args.bindings)?;
    let mut cache = crate::cachesim::Cache::new(config);
    let exec = program.execute(&bindings, args.access_limit, |a| cache.access(a));
    exec.outcome.map_err(|e| anyhow!("{}: {e}", args.file.display()))?;
    Ok(SimulationSummary {
        config,
        stats: cache.stats(),
        emitted: Some(exec.emitted),
    })
}

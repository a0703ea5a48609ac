//! Warm-up, budgeted first-improvement local search, and minification.
//!
//! Search starts from the empty patch with relative fitness 1.0. Each step
//! evaluates one neighbour of the current patch and moves there only on a
//! strict improvement. After `restart_after` steps without one, the current
//! patch resets to empty; the tabu store persists across restarts. Every
//! `sentinel_every` steps the empty patch is re-measured as a drift probe;
//! probes are logged but not counted against the budget.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::Driver;
use crate::evaluation::{
    compare_fitness, evaluate, ArtifactFilter, Category, EvalError, EvalOptions, FitnessOrdering, FitnessRecord,
    GateStatus, TestCase,
};
use crate::operators::{neighbor, OperatorWeights, RngHandle};
use crate::source_model::{apply_patch, format_patch, Patch, SourceRoster};
use crate::stats::{drift_check, mean, DriftReport};

pub use crate::stats::coupon_budget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Candidate evaluations; derived from `confidence` when absent.
    pub budget_steps: Option<u64>,
    pub confidence: f64,
    pub warmup_count: usize,
    pub repeats: usize,
    pub seed: u64,
    pub restart_after: u64,
    /// Steps between drift probes; 0 disables them.
    pub sentinel_every: u64,
    pub drift_tolerance: f64,
    /// Re-baseline relative fitness on each drift probe. Off by default.
    pub rebaseline: bool,
    /// Allowed loss of relative fitness when minify drops an edit.
    pub minify_slack: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget_steps: None,
            confidence: 0.99,
            warmup_count: 11,
            repeats: 11,
            seed: 0,
            restart_after: 100,
            sentinel_every: 25,
            drift_tolerance: 0.05,
            rebaseline: false,
            minify_slack: 0.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.budget_steps == Some(0) {
            return bad("budget_steps must be at least 1");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie strictly between 0 and 1");
        }
        if self.warmup_count == 0 {
            return bad("warmup_count must be at least 1");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if !(self.drift_tolerance > 0.0 && self.drift_tolerance < 1.0) {
            return bad("drift_tolerance must lie strictly between 0 and 1");
        }
        if self.minify_slack.is_nan() || self.minify_slack < 0.0 {
            return bad("minify_slack must be non-negative");
        }
        Ok(())
    }

    /// `budget_steps`, or the coupon-collector budget over the roster's
    /// mutable lines.
    pub fn budget_for(&self, roster: &SourceRoster) -> Result<u64, SearchError> {
        match self.budget_steps {
            Some(b) => Ok(b),
            None => coupon_budget(roster.mutable_points().len(), self.confidence)
                .map_err(|e| SearchError::Config(e.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("warm-up evaluation {index} of the unpatched program failed ({status}): {detail}")]
    WarmUp {
        index: usize,
        status: GateStatus,
        detail: String,
    },
    #[error("warm-up baseline is zero; relative fitness is undefined")]
    ZeroBaseline,
    #[error("patch to minify does not pass all gates ({status}): {detail}")]
    MinifyInput { status: GateStatus, detail: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Apply(#[from] crate::source_model::ApplyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registration {
    New,
    Duplicate,
}

/// Compiled artifacts seen so far, bucketed by byte length. A candidate is
/// compared byte-for-byte only against stored artifacts of the same length.
/// With a directory, each new artifact is also written to
/// `<dir>/<size>/<ordinal>.bin`.
#[derive(Debug, Default)]
pub struct TabuStore {
    by_size: HashMap<usize, Vec<Vec<u8>>>,
    dir: Option<PathBuf>,
    stored: u64,
    duplicate_count: u64,
}

impl TabuStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            ..Self::default()
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn stored(&self) -> u64 {
        self.stored
    }

    pub fn duplicate_count(&self) -> u64 {
        self.duplicate_count
    }

    pub fn register_artifact(&mut self, bytes: &[u8]) -> io::Result<Registration> {
        let bucket = self.by_size.entry(bytes.len()).or_default();
        if bucket.iter().any(|b| b == bytes) {
            self.duplicate_count += 1;
            return Ok(Registration::Duplicate);
        }
        if let Some(dir) = &self.dir {
            let size_dir = dir.join(bytes.len().to_string());
            fs::create_dir_all(&size_dir)?;
            fs::write(size_dir.join(format!("{}.bin", bucket.len())), bytes)?;
        }
        bucket.push(bytes.to_vec());
        self.stored += 1;
        Ok(Registration::New)
    }
}

impl ArtifactFilter for TabuStore {
    fn is_duplicate(&mut self, artifact: &[u8]) -> io::Result<bool> {
        Ok(self.register_artifact(artifact)? == Registration::Duplicate)
    }
}

/// The individual warm-up measurements kept out of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmUp {
    pub baseline: f64,
    pub summarized_metrics: Vec<f64>,
    pub variance: f64,
}

/// Evaluates the empty patch `warmup_count` times and averages the summarized
/// metrics. The original artifact is registered with `tabu` once, so later
/// candidates that compile back to it count as duplicates.
pub fn warm_up<D: Driver>(
    roster: &SourceRoster,
    suite: &[TestCase],
    driver: &mut D,
    config: &SearchConfig,
    tabu: Option<&mut TabuStore>,
) -> Result<WarmUp, SearchError> {
    config.validate()?;
    let original = roster.original();
    driver.begin_step(0);
    let options = EvalOptions::new(config.repeats, None);
    let mut values = Vec::with_capacity(config.warmup_count);
    let mut tabu = tabu;
    for index in 0..config.warmup_count {
        let filter = if index == 0 { tabu.as_deref_mut() } else { None };
        let record = evaluate(&original, suite, driver, &options, filter.map(|t| t as &mut dyn ArtifactFilter))?;
        if !record.is_ok() {
            return Err(SearchError::WarmUp {
                index,
                status: record.status(),
                detail: record.outcome.detail,
            });
        }
        values.push(record.summarized_metric.expect("ok records carry a metric"));
    }
    let baseline = mean(&values).expect("warmup_count >= 1");
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(SearchError::ZeroBaseline);
    }
    let variance = values.iter().map(|v| (v - baseline).powi(2)).sum::<f64>() / values.len() as f64;
    Ok(WarmUp {
        baseline,
        summarized_metrics: values,
        variance,
    })
}

/// One line of the run log. `elapsed_ms` is the only field that varies
/// between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub patch: String,
    pub status: GateStatus,
    pub metric: Option<f64>,
    pub rel_fitness: Option<f64>,
    pub elapsed_ms: u64,
    pub sentinel: bool,
}

/// Step counts per outcome category. Sentinel probes are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub counts: BTreeMap<Category, u64>,
}

impl Accounting {
    pub fn record(&mut self, status: GateStatus) {
        *self.counts.entry(status.category()).or_default() += 1;
    }

    pub fn count(&self, category: Category) -> u64 {
        self.counts.get(&category).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn from_log<'a>(records: impl IntoIterator<Item = &'a StepRecord>) -> Self {
        let mut acc = Self::default();
        for r in records.into_iter().filter(|r| !r.sentinel) {
            acc.record(r.status);
        }
        acc
    }

    /// Two columns per category: count and percentage of all steps.
    pub fn render(&self) -> String {
        let total = self.total();
        let mut out = format!("{:<14} {:>8} {:>8}\n", "outcome", "steps", "percent");
        for c in Category::ALL {
            let n = self.count(c);
            let pct = if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
            out.push_str(&format!("{:<14} {:>8} {:>7.1}%\n", c.label(), n, pct));
        }
        out.push_str(&format!("{:<14} {:>8} {:>7.1}%\n", "total", total, if total == 0 { 0.0 } else { 100.0 }));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    #[serde(skip)]
    pub best_patch: Patch,
    pub best_patch_text: String,
    pub best_fitness: FitnessRecord,
    pub budget_steps: u64,
    pub baseline: f64,
    #[serde(skip)]
    pub log: Vec<StepRecord>,
    pub accounting: Accounting,
    pub duplicates: u64,
    pub sentinels: Vec<(u64, f64)>,
    pub drift: Option<DriftReport>,
}

fn log_record(step: u64, patch: String, fit: &FitnessRecord, started: Instant, sentinel: bool) -> StepRecord {
    StepRecord {
        step,
        patch,
        status: fit.status(),
        metric: fit.summarized_metric,
        rel_fitness: fit.relative_fitness,
        elapsed_ms: started.elapsed().as_millis() as u64,
        sentinel,
    }
}

/// Budgeted first-improvement hill climbing from the empty patch.
///
/// `on_record` sees every log record as soon as it exists, so callers can
/// persist the log incrementally.
#[allow(clippy::too_many_arguments)]
pub fn local_search<D: Driver>(
    roster: &SourceRoster,
    suite: &[TestCase],
    driver: &mut D,
    config: &SearchConfig,
    weights: &OperatorWeights,
    warmup: &WarmUp,
    tabu: &mut TabuStore,
    on_record: &mut dyn FnMut(&StepRecord),
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let budget = config.budget_for(roster)?;
    let started = Instant::now();
    let mut rng = RngHandle::new(config.seed);
    let mut baseline = warmup.baseline;
    let mut current = Patch::empty();
    let mut current_fit = FitnessRecord::unpatched(baseline);
    let mut best = current.clone();
    let mut best_fit = current_fit.clone();
    let mut stagnant = 0u64;
    let mut log = Vec::new();
    let mut accounting = Accounting::default();
    let mut sentinels = Vec::new();
    let duplicates_before = tabu.duplicate_count();
    let original = roster.original();

    for step in 1..=budget {
        driver.begin_step(step);
        let candidate = neighbor(&current, roster, weights, &mut rng);
        let options = EvalOptions::new(config.repeats, Some(baseline));
        let fit = match apply_patch(roster, &candidate) {
            Ok(source) => evaluate(&source, suite, driver, &options, Some(tabu as &mut dyn ArtifactFilter))?,
            Err(e) => FitnessRecord::failed(GateStatus::CompileError, e.to_string()),
        };
        accounting.record(fit.status());
        let record = log_record(step, format_patch(&candidate, roster), &fit, started, false);
        on_record(&record);
        log.push(record);

        if compare_fitness(&fit, &current_fit) == FitnessOrdering::ABetter {
            if compare_fitness(&fit, &best_fit) == FitnessOrdering::ABetter {
                best = candidate.clone();
                best_fit = fit.clone();
            }
            current = candidate;
            current_fit = fit;
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= config.restart_after {
                current = Patch::empty();
                current_fit = FitnessRecord::unpatched(baseline);
                stagnant = 0;
            }
        }

        if config.sentinel_every > 0 && step % config.sentinel_every == 0 {
            let probe = evaluate(&original, suite, driver, &options, None)?;
            let record = log_record(step, String::new(), &probe, started, true);
            on_record(&record);
            log.push(record);
            if let Some(m) = probe.summarized_metric {
                sentinels.push((step, m));
                if config.rebaseline && m > 0.0 {
                    baseline = m;
                    current_fit.rebase(baseline);
                }
            }
        }
    }

    let drift = (!sentinels.is_empty()).then(|| drift_check(&sentinels, warmup.baseline, config.drift_tolerance));
    Ok(SearchResult {
        best_patch_text: format_patch(&best, roster),
        best_patch: best,
        best_fitness: best_fit,
        budget_steps: budget,
        baseline: warmup.baseline,
        log,
        accounting,
        duplicates: tabu.duplicate_count() - duplicates_before,
        sentinels,
        drift,
    })
}

/// Warm-up followed by local search with a fresh in-memory tabu store.
pub fn run_search<D: Driver>(
    roster: &SourceRoster,
    suite: &[TestCase],
    driver: &mut D,
    config: &SearchConfig,
    weights: &OperatorWeights,
) -> Result<(WarmUp, SearchResult), SearchError> {
    let mut tabu = TabuStore::in_memory();
    let warmup = warm_up(roster, suite, driver, config, Some(&mut tabu))?;
    let result = local_search(roster, suite, driver, config, weights, &warmup, &mut tabu, &mut |_| {})?;
    Ok((warmup, result))
}

/// Greedy backward minification. Each edit, last to first, is dropped when
/// the remaining patch still passes every gate and its relative fitness is
/// within `config.minify_slack` of the input patch's. The result is a
/// subsequence of the input. The tabu store is not consulted.
pub fn minify<D: Driver>(
    patch: &Patch,
    roster: &SourceRoster,
    suite: &[TestCase],
    driver: &mut D,
    config: &SearchConfig,
    baseline: f64,
) -> Result<Patch, SearchError> {
    let options = EvalOptions::new(config.repeats, Some(baseline));
    let full = evaluate(&apply_patch(roster, patch)?, suite, driver, &options, None)?;
    if !full.is_ok() {
        return Err(SearchError::MinifyInput {
            status: full.status(),
            detail: full.outcome.detail,
        });
    }
    let limit = full.relative_fitness.expect("baseline given") + config.minify_slack;
    let mut current = patch.clone();
    for i in (0..patch.len()).rev() {
        let reduced = current.without(i);
        let fit = evaluate(&apply_patch(roster, &reduced)?, suite, driver, &options, None)?;
        if fit.is_ok() && fit.relative_fitness.is_some_and(|r| r <= limit) {
            current = reduced;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{SimDriver, SimDriverConfig};
    use crate::source_model::{parse_patch, StripPolicy};

    const PROGRAM: &str =
        "array A 16384 4\nloop i 0 128\nloop j 0 128\nload A[j*128+i]\nend\nend\nemit acc\nloop k 0 0\nemit k\nend";

    fn setup() -> (SourceRoster, Vec<TestCase>, SimDriver) {
        let roster = SourceRoster::from_text("t.trace", PROGRAM, StripPolicy::None).unwrap();
        let mut driver = SimDriver::new(SimDriverConfig::default());
        let specs = vec![crate::evaluation::CaseSpec {
            id: "s1".into(),
            input: b"seed=1".to_vec(),
            expected_output: None,
            expected_exit: None,
        }];
        let suite = crate::evaluation::record_expectations(&mut driver, &roster.original(), specs).unwrap();
        (roster, suite, driver)
    }

    fn quick() -> SearchConfig {
        SearchConfig {
            repeats: 1,
            warmup_count: 3,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn tabu_examples() {
        let mut t = TabuStore::in_memory();
        assert_eq!(t.register_artifact(b"abc").unwrap(), Registration::New);
        assert_eq!(t.register_artifact(b"abc").unwrap(), Registration::Duplicate);
        assert_eq!(t.register_artifact(b"abd").unwrap(), Registration::New);
        assert_eq!((t.stored(), t.duplicate_count()), (2, 1));
    }

    #[test]
    fn tabu_directory_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let mut t = TabuStore::with_dir(tmp.path().join("tabu")).unwrap();
        t.register_artifact(b"abc").unwrap();
        t.register_artifact(b"abd").unwrap();
        t.register_artifact(b"abcd").unwrap();
        t.register_artifact(b"abc").unwrap();
        let root = tmp.path().join("tabu");
        assert_eq!(fs::read(root.join("3/0.bin")).unwrap(), b"abc");
        assert_eq!(fs::read(root.join("3/1.bin")).unwrap(), b"abd");
        assert_eq!(fs::read(root.join("4/0.bin")).unwrap(), b"abcd");
        assert!(!root.join("3/2.bin").exists());
    }

    #[test]
    fn deterministic_warm_up_has_zero_variance() {
        let (roster, suite, mut driver) = setup();
        let w = warm_up(&roster, &suite, &mut driver, &SearchConfig::default(), None).unwrap();
        assert_eq!(w.summarized_metrics.len(), 11);
        assert_eq!(w.baseline, 16384.0);
        assert_eq!(w.variance, 0.0);
    }

    #[test]
    fn budget_one_with_compile_failure_keeps_empty_patch() {
        struct Broken<D>(D, u32);
        impl<D: Driver> Driver for Broken<D> {
            type Artifact = D::Artifact;
            fn compile(
                &mut self,
                s: &crate::source_model::PatchedSource,
            ) -> Result<D::Artifact, crate::drivers::CompileFailure> {
                self.1 += 1;
                if self.1 > 1 {
                    Err(crate::drivers::CompileFailure::new("forced"))
                } else {
                    self.0.compile(s)
                }
            }
            fn run(
                &mut self,
                a: &D::Artifact,
                c: &TestCase,
                m: bool,
            ) -> Result<crate::drivers::RunOutput, crate::drivers::RunFailure> {
                self.0.run(a, c, m)
            }
        }
        let (roster, suite, driver) = setup();
        let mut d = Broken(driver, 0);
        let cfg = SearchConfig {
            budget_steps: Some(1),
            warmup_count: 1,
            ..quick()
        };
        let (_, r) = run_search(&roster, &suite, &mut d, &cfg, &OperatorWeights::default()).unwrap();
        assert!(r.best_patch.is_empty());
        assert_eq!(r.best_fitness.relative_fitness, Some(1.0));
        assert_eq!(r.accounting.count(Category::CompileError), 1);
        assert_eq!(r.accounting.total(), 1);
    }

    #[test]
    fn search_conserves_steps_and_tracks_best() {
        let (roster, suite, mut driver) = setup();
        let cfg = SearchConfig {
            budget_steps: Some(60),
            sentinel_every: 10,
            seed: 3,
            ..quick()
        };
        let (_, r) = run_search(&roster, &suite, &mut driver, &cfg, &OperatorWeights::default()).unwrap();
        assert_eq!(r.accounting.total(), 60);
        assert_eq!(r.log.iter().filter(|l| !l.sentinel).count(), 60);
        assert_eq!(r.log.iter().filter(|l| l.sentinel).count(), 6);
        assert_eq!(r.sentinels.len(), 6);
        assert!(!r.drift.as_ref().unwrap().drifting);
        let best_logged = r
            .log
            .iter()
            .filter(|l| !l.sentinel && l.status == GateStatus::Ok)
            .filter_map(|l| l.rel_fitness)
            .fold(1.0f64, f64::min);
        assert_eq!(r.best_fitness.relative_fitness, Some(best_logged));
    }

    #[test]
    fn minify_drops_dead_line_deletion() {
        let (roster, suite, mut driver) = setup();
        let cfg = quick();
        let w = warm_up(&roster, &suite, &mut driver, &cfg, None).unwrap();
        // Swapping the loop headers takes two edits; line 9 sits in a
        // zero-trip loop.
        let patch = parse_patch("Replacement 2 <- 3, Replacement 3 <- 2, Deletion 9", &roster).unwrap();
        let min = minify(&patch, &roster, &suite, &mut driver, &cfg, w.baseline).unwrap();
        assert_eq!(min.edits, patch.edits[..2]);
        let fit = evaluate(
            &apply_patch(&roster, &min).unwrap(),
            &suite,
            &mut driver,
            &EvalOptions::new(1, Some(w.baseline)),
            None,
        )
        .unwrap();
        assert_eq!(fit.relative_fitness, Some(1024.0 / 16384.0));
    }

    #[test]
    fn minify_rejects_failing_input() {
        let (roster, suite, mut driver) = setup();
        let patch = parse_patch("Deletion 5", &roster).unwrap();
        assert!(matches!(
            minify(&patch, &roster, &suite, &mut driver, &quick(), 1.0),
            Err(SearchError::MinifyInput { .. })
        ));
        let empty = minify(&Patch::empty(), &roster, &suite, &mut driver, &quick(), 1.0).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        let bad = [
            SearchConfig {
                budget_steps: Some(0),
                ..SearchConfig::default()
            },
            SearchConfig {
                warmup_count: 0,
                ..SearchConfig::default()
            },
            SearchConfig {
                drift_tolerance: 1.0,
                ..SearchConfig::default()
            },
            SearchConfig {
                confidence: 1.0,
                ..SearchConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}

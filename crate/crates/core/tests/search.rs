mod common;

use std::fs;

use cachegi::cli::{cmd_search, SearchArgs};
use cachegi::drivers::{Driver, SimDriver};
use cachegi::evaluation::{compare_fitness, FitnessOrdering};
use cachegi::search_engine::{local_search, minify, warm_up, TabuStore};
use cachegi::source_model::{format_patch, parse_patch};
use common::{load_demo, tabu_violations, Recording};

#[test]
fn no_artifact_is_measured_twice() {
    let demo = load_demo();
    let config = &demo.config.search;
    let mut rec = Recording::new(SimDriver::new(demo.sim.clone()));
    let mut tabu = TabuStore::in_memory();
    let warmup = warm_up(&demo.roster, &demo.suite, &mut rec, config, Some(&mut tabu)).unwrap();
    let mut sentinels = 0;
    let result = local_search(
        &demo.roster,
        &demo.suite,
        &mut rec,
        config,
        &demo.config.operators.weights,
        &warmup,
        &mut tabu,
        &mut |r| sentinels += u64::from(r.sentinel),
    )
    .unwrap();
    let original = SimDriver::new(demo.sim.clone()).compile(&demo.roster.original()).unwrap();
    assert_eq!(tabu_violations(&rec, original.as_ref(), config.sentinel_every), Vec::<String>::new());
    assert!(result.duplicates > 0);
    assert_eq!(result.duplicates, tabu.duplicate_count());
    assert_eq!(sentinels, result.budget_steps / config.sentinel_every);
    assert_eq!(result.accounting.total(), result.budget_steps);
    assert_eq!(rec.compiles, result.budget_steps + sentinels + config.warmup_count as u64);
}

#[test]
fn best_is_never_worse_than_anything_logged() {
    let demo = load_demo();
    let mut driver = SimDriver::new(demo.sim.clone());
    let (warmup, result) = cachegi::search_engine::run_search(
        &demo.roster,
        &demo.suite,
        &mut driver,
        &demo.config.search,
        &demo.config.operators.weights,
    )
    .unwrap();
    assert!(warmup.baseline > 0.0);
    let best = result.best_fitness.relative_fitness.unwrap();
    assert!(best <= 1.0);
    for r in result.log.iter().filter(|r| !r.sentinel && r.status.is_ok()) {
        assert!(best <= r.rel_fitness.unwrap(), "step {} beat the best", r.step);
    }
    assert_eq!(format_patch(&result.best_patch, &demo.roster), result.best_patch_text);
}

fn stripped_log(dir: &std::path::Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("run_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("elapsed_ms");
            v
        })
        .collect()
}

#[test]
fn same_seed_same_log() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: u64| {
        let mut args = SearchArgs::new(common::demo_config_path());
        args.output_dir = Some(tmp.path().join(name));
        args.seed = Some(seed);
        args.budget = Some(300);
        cmd_search(&args).unwrap();
        stripped_log(&tmp.path().join(name))
    };
    let a = run("a", 3);
    assert_eq!(a, run("b", 3));
    assert!(a.len() > 300);
    assert_ne!(a, run("c", 4));
    assert_eq!(
        fs::read(tmp.path().join("a/best.patch")).unwrap(),
        fs::read(tmp.path().join("b/best.patch")).unwrap()
    );
}

#[test]
fn minify_keeps_only_the_load_bearing_edit() {
    let demo = load_demo();
    let mut driver = SimDriver::new(demo.sim.clone());
    let warmup = warm_up(&demo.roster, &demo.suite, &mut driver, &demo.config.search, None).unwrap();
    for noisy in ["Deletion 20, Replacement 4 <- 12", "Replacement 4 <- 12, Deletion 20, Insertion before 145 of 30"] {
        let patch = parse_patch(noisy, &demo.roster).unwrap();
        let out = minify(&patch, &demo.roster, &demo.suite, &mut driver, &demo.config.search, warmup.baseline).unwrap();
        assert_eq!(format_patch(&out, &demo.roster), "Replacement 4 <- 12");
    }
}

#[test]
fn the_demo_fix_beats_the_original() {
    let demo = load_demo();
    let mut driver = SimDriver::new(demo.sim.clone());
    let warmup = warm_up(&demo.roster, &demo.suite, &mut driver, &demo.config.search, None).unwrap();
    let options = cachegi::evaluation::EvalOptions::new(3, Some(warmup.baseline));
    let patch = parse_patch("Replacement 4 <- 12", &demo.roster).unwrap();
    let source = cachegi::source_model::apply_patch(&demo.roster, &patch).unwrap();
    let fit = cachegi::evaluation::evaluate(&source, &demo.suite, &mut driver, &options, None).unwrap();
    let unpatched = cachegi::evaluation::FitnessRecord::unpatched(warmup.baseline);
    assert_eq!(compare_fitness(&fit, &unpatched), FitnessOrdering::ABetter);
    assert_eq!(fit.relative_fitness, Some(1024.0 / 16384.0));
}

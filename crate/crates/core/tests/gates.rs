mod common;

use std::cell::Cell;

use cachegi::evaluation::{
    compare_fitness, evaluate, ArtifactFilter, EvalOptions, FitnessOrdering, FitnessRecord, GateStatus, TestCase,
};
use cachegi::source_model::{SourceRoster, StripPolicy};
use common::{Behaviour, Counting};
use proptest::prelude::*;

fn behaviour() -> impl Strategy<Value = Behaviour> {
    prop_oneof![
        6 => Just(Behaviour::Pass),
        1 => Just(Behaviour::WrongOutput),
        1 => Just(Behaviour::WrongExit),
        1 => Just(Behaviour::Timeout),
        1 => Just(Behaviour::Fault),
    ]
}

struct Always(bool, Cell<usize>);

impl ArtifactFilter for Always {
    fn is_duplicate(&mut self, _: &[u8]) -> std::io::Result<bool> {
        self.1.set(self.1.get() + 1);
        Ok(self.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn gates_short_circuit(
        script in prop::collection::vec(behaviour(), 1..8),
        exits in prop::collection::vec(prop_oneof![3 => Just(0), 1 => Just(3)], 8),
        metrics in prop::collection::vec(0u64..1000, 8),
        compile_ok in prop::bool::weighted(0.8),
        duplicate in prop::bool::weighted(0.2),
        repeats in 1usize..6,
    ) {
        let n = script.len();
        let suite: Vec<TestCase> = (0..n).map(|i| TestCase::new(&i.to_string(), "", "out", exits[i])).collect();
        let roster = SourceRoster::from_text("p", "x\n", StripPolicy::None).unwrap();
        let mut driver = Counting { compile_ok, script: script.clone(), metrics, runs: 0, metric_runs: 0 };
        let mut tabu = Always(duplicate, Cell::new(0));
        let fit = evaluate(&roster.original(), &suite, &mut driver, &EvalOptions::new(repeats, Some(100.0)), Some(&mut tabu)).unwrap();

        if !compile_ok {
            prop_assert_eq!(fit.status(), GateStatus::CompileError);
            prop_assert_eq!(tabu.1.get(), 0);
            prop_assert_eq!(driver.runs + driver.metric_runs, 0);
            return Ok(());
        }
        if duplicate {
            prop_assert_eq!(fit.status(), GateStatus::TabuDuplicate);
            prop_assert_eq!(driver.runs + driver.metric_runs, 0);
            return Ok(());
        }
        match script.iter().position(|b| !matches!(b, Behaviour::Pass)) {
            Some(k) => {
                let expected = match script[k] {
                    Behaviour::Timeout => GateStatus::Timeout,
                    Behaviour::Fault => GateStatus::RunError,
                    Behaviour::WrongExit if exits[k] == 0 => GateStatus::RunError,
                    _ => GateStatus::OutputMismatch(k + 1),
                };
                prop_assert_eq!(fit.status(), expected);
                prop_assert_eq!(driver.runs, k + 1);
                prop_assert_eq!(driver.metric_runs, 0);
                prop_assert!(fit.metric_samples.is_empty() && fit.summarized_metric.is_none());
            }
            None => {
                prop_assert!(fit.is_ok());
                prop_assert_eq!(driver.runs, n);
                prop_assert_eq!(driver.metric_runs, n * repeats);
                let sum: u64 = driver.metrics[..n].iter().sum();
                prop_assert_eq!(fit.summarized_metric, Some(sum as f64));
                prop_assert_eq!(fit.relative_fitness, Some(sum as f64 / 100.0));
            }
        }
    }
}

fn record() -> impl Strategy<Value = FitnessRecord> {
    prop_oneof![
        (0u32..5).prop_map(|r| {
            let mut f = FitnessRecord::unpatched(100.0);
            f.summarized_metric = Some(f64::from(r) * 25.0);
            f.relative_fitness = Some(f64::from(r) * 0.25);
            f
        }),
        Just(FitnessRecord::failed(GateStatus::CompileError, "")),
        Just(FitnessRecord::failed(GateStatus::Timeout, "")),
        (1usize..4).prop_map(|i| FitnessRecord::failed(GateStatus::OutputMismatch(i), "")),
    ]
}

fn not_worse(a: &FitnessRecord, b: &FitnessRecord) -> bool {
    compare_fitness(a, b) != FitnessOrdering::BBetter
}

proptest! {
    #[test]
    fn compare_fitness_is_a_total_preorder(a in record(), b in record(), c in record()) {
        prop_assert_eq!(compare_fitness(&a, &a), FitnessOrdering::Equal);
        prop_assert!(not_worse(&a, &b) || not_worse(&b, &a));
        let flipped = match compare_fitness(&b, &a) {
            FitnessOrdering::ABetter => FitnessOrdering::BBetter,
            FitnessOrdering::BBetter => FitnessOrdering::ABetter,
            FitnessOrdering::Equal => FitnessOrdering::Equal,
        };
        prop_assert_eq!(compare_fitness(&a, &b), flipped);
        if not_worse(&a, &b) && not_worse(&b, &c) {
            prop_assert!(not_worse(&a, &c));
        }
        if a.is_ok() && !b.is_ok() {
            prop_assert_eq!(compare_fitness(&a, &b), FitnessOrdering::ABetter);
        }
    }
}

#[test]
fn status_strings_round_trip() {
    for s in [
        GateStatus::CompileError,
        GateStatus::TabuDuplicate,
        GateStatus::RunError,
        GateStatus::Timeout,
        GateStatus::OutputMismatch(3),
        GateStatus::Ok,
    ] {
        assert_eq!(s.to_string().parse::<GateStatus>().unwrap(), s);
    }
    assert_eq!(GateStatus::OutputMismatch(3).to_string(), "output_mismatch:3");
}

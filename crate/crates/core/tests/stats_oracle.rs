mod common;

use cachegi::stats::{coupon_budget, coverage_probability, mann_whitney, quartile1, PValueMethod};
use common::brute_force_mann_whitney;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn exact_mann_whitney_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for na in 1..=5 {
        for nb in 1..=5 {
            for _ in 0..100 {
                let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..6) as f64).collect();
                let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..6) as f64).collect();
                let mw = mann_whitney(&a, &b).unwrap();
                let (u, p) = brute_force_mann_whitney(&a, &b);
                assert_eq!(mw.method, PValueMethod::Exact);
                assert_eq!((mw.u, mw.p_two_sided), (u, p), "a={a:?} b={b:?}");
            }
        }
    }
}

#[test]
fn quartile_ignores_inflated_upper_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=40);
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(1..1000) as f64).collect();
        let q = quartile1(&samples).unwrap();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = (n - 1) / 4;
        for v in sorted[rank + 1..].iter_mut() {
            if rng.random_bool(0.5) {
                *v *= 100.0;
            }
        }
        // shuffle so position carries no information
        for i in (1..sorted.len()).rev() {
            let j = rng.random_range(0..=i);
            sorted.swap(i, j);
        }
        violations += usize::from(quartile1(&sorted).unwrap() != q);
    }
    assert_eq!(violations, 0);
}

fn monte_carlo_coverage(n: usize, draws: u64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = vec![0usize; n];
    let mut covered = 0;
    for trial in 1..=trials {
        let mut distinct = 0;
        for _ in 0..draws {
            let c = rng.random_range(0..n);
            if seen[c] != trial {
                seen[c] = trial;
                distinct += 1;
                if distinct == n {
                    break;
                }
            }
        }
        covered += usize::from(distinct == n);
    }
    covered as f64 / trials as f64
}

#[test]
fn coupon_budget_covers_at_99_percent() {
    for (i, n) in [10usize, 50, 100, 319].into_iter().enumerate() {
        let t = coupon_budget(n, 0.99).unwrap();
        let freq = monte_carlo_coverage(n, t, 10_000, 100 + i as u64);
        assert!(freq >= 0.985, "n={n} t={t} coverage {freq}");
    }
}

#[test]
fn coupon_budget_values() {
    assert_eq!(coupon_budget(100, 0.99).unwrap(), 921);
    assert_eq!(coupon_budget(319, 0.985).unwrap(), 3177);
    assert_eq!(coupon_budget(1615, 0.99).unwrap(), 19360);
    assert!(coverage_probability(100, 921) >= 0.99);
    assert_eq!(coverage_probability(30, 0), (-30f64).exp());
    assert!(coupon_budget(0, 0.5).is_err());
    assert!(coupon_budget(10, 1.0).is_err());
    assert!(coupon_budget(10, 0.0).is_err());
    // a negative log term clamps to N
    assert_eq!(coupon_budget(1, 0.99).unwrap(), 5);
    assert_eq!(coupon_budget(1, 0.3).unwrap(), 1);
}

proptest! {
    #[test]
    fn u_statistics_are_complementary(
        a in prop::collection::vec(0u8..10, 1..30),
        b in prop::collection::vec(0u8..10, 1..30),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney(&a, &b).unwrap();
        let ba = mann_whitney(&b, &a).unwrap();
        prop_assert_eq!(ab.u + ba.u, (a.len() * b.len()) as f64);
        prop_assert_eq!(ab.p_two_sided, ba.p_two_sided);
        prop_assert!(ab.p_two_sided > 0.0 && ab.p_two_sided <= 1.0);
    }

    #[test]
    fn quartile_is_permutation_invariant(mut v in prop::collection::vec(-1e6f64..1e6, 1..100), seed in any::<u64>()) {
        let q = quartile1(&v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v.len()).rev() {
            let j = rng.random_range(0..=i);
            v.swap(i, j);
        }
        prop_assert_eq!(quartile1(&v).unwrap(), q);
    }

    #[test]
    fn coverage_is_monotone(n in 1usize..2000, t in 0u64..50_000, dt in 0u64..1000) {
        prop_assert!(coverage_probability(n, t + dt) >= coverage_probability(n, t));
        prop_assert!(coverage_probability(n + 1, t) <= coverage_probability(n, t));
    }
}

//! Robust statistics used by evaluation, search and holdout validation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{0} requires at least one sample")]
    Empty(&'static str),
    #[error("coupon budget needs n >= 1 and 0 < confidence < 1 (got n = {n}, confidence = {confidence})")]
    BudgetDomain { n: usize, confidence: f64 },
}

/// Lower quartile by nearest rank: the element at 0-based rank
/// `floor((n - 1) / 4)` of the ascending sort. No interpolation.
pub fn quartile1(samples: &[f64]) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty("quartile1"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 4])
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        None
    } else {
        Some(samples.iter().sum::<f64>() / samples.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: PValueMethod,
}

/// Largest pooled sample for which the exact null distribution is used.
pub const EXACT_MAX_TOTAL: usize = 20;
/// Exact mode also needs the smaller group to be at most this size.
pub const EXACT_MAX_MIN_GROUP: usize = 8;

/// Two-sided Mann-Whitney U test with midranks for ties.
///
/// Small samples (smaller group at most 8, at most 20 values pooled) get the
/// exact permutation p-value, computed by counting subsets of the pooled
/// midranks. Larger samples use the normal approximation with tie-corrected
/// variance and a continuity correction.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty("mann_whitney"));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let doubled = doubled_midranks(a, b);
    // 2 * R_a, kept integral so exact comparisons need no epsilon.
    let rank_sum2: u64 = doubled[..na].iter().sum();
    // 2U = 2R - na(na+1)
    let u2 = rank_sum2 as i64 - (na * (na + 1)) as i64;
    let u = u2 as f64 / 2.0;

    if na.min(nb) <= EXACT_MAX_MIN_GROUP && n <= EXACT_MAX_TOTAL {
        let p = exact_p(&doubled, na, u2);
        return Ok(MannWhitney {
            u,
            p_two_sided: p,
            method: PValueMethod::Exact,
        });
    }

    let mean_u = (na * nb) as f64 / 2.0;
    let tie_term: f64 = tie_group_sizes(a, b)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let nf = n as f64;
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean_u).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_two_sided: p,
        method: PValueMethod::Normal,
    })
}

/// Midranks (times two) of the pooled sample, `a` first then `b`.
fn doubled_midranks(a: &[f64], b: &[f64]) -> Vec<u64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&x, &y| pooled[x].total_cmp(&pooled[y]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, midrank doubled = start + 1 + end
        let mid2 = (start + 1 + end) as u64;
        for &idx in &order[start..end] {
            ranks[idx] = mid2;
        }
        start = end;
    }
    ranks
}

fn tie_group_sizes(a: &[f64], b: &[f64]) -> Vec<usize> {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end] == pooled[start] {
            end += 1;
        }
        sizes.push(end - start);
        start = end;
    }
    sizes
}

/// Exact two-sided p-value: the fraction of size-`na` subsets of the pooled
/// midranks whose U is at least as far from its mean as the observed one.
fn exact_p(doubled: &[u64], na: usize, observed_u2: i64) -> f64 {
    let n = doubled.len();
    let max_sum: usize = doubled.iter().sum::<u64>() as usize;
    // ways[k][s]: number of k-subsets with doubled rank sum s
    let mut ways = vec![vec![0u64; max_sum + 1]; na + 1];
    ways[0][0] = 1;
    for &r in doubled {
        let r = r as usize;
        for k in (1..=na).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[k - 1][s - r];
                if add != 0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let nb = n - na;
    let offset = (na * (na + 1)) as i64;
    // |2U - na*nb| compared in doubled units
    let centre = (na * nb) as i64;
    let observed_dev = (observed_u2 - centre).abs();
    let mut total = 0u64;
    let mut extreme = 0u64;
    for (s, &count) in ways[na].iter().enumerate() {
        if count == 0 {
            continue;
        }
        total += count;
        let u2 = s as i64 - offset;
        if (u2 - centre).abs() >= observed_dev {
            extreme += count;
        }
    }
    extreme as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub drifting: bool,
    pub worst_ratio: f64,
    pub onset_step: Option<u64>,
}

/// Flags sentinel measurements that stray outside `[1 - tol, 1 + tol]` of the
/// baseline.
pub fn drift_check(history: &[(u64, f64)], baseline: f64, tolerance: f64) -> DriftReport {
    let mut worst_ratio = 1.0;
    let mut onset_step = None;
    for &(step, metric) in history {
        let ratio = metric / baseline;
        if (ratio - 1.0).abs() > (worst_ratio - 1.0f64).abs() {
            worst_ratio = ratio;
        }
        if onset_step.is_none() && !(1.0 - tolerance..=1.0 + tolerance).contains(&ratio) {
            onset_step = Some(step);
        }
    }
    DriftReport {
        drifting: onset_step.is_some(),
        worst_ratio,
        onset_step,
    }
}

/// Asymptotic probability that `draws` uniform draws collect all `n` coupons:
/// `exp(-n * exp(-draws / n))`.
pub fn coverage_probability(n: usize, draws: u64) -> f64 {
    let n = n as f64;
    (-n * (-(draws as f64) / n).exp()).exp()
}

/// Draws needed so that every one of `n` lines is expected to be visited with
/// probability `confidence`; inverts [`coverage_probability`].
pub fn coupon_budget(n: usize, confidence: f64) -> Result<u64, StatsError> {
    if n == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::BudgetDomain { n, confidence });
    }
    let nf = n as f64;
    let raw = (nf * (nf / (1.0 / confidence).ln()).ln()).ceil();
    Ok(if raw.is_finite() && raw > nf {
        raw as u64
    } else {
        n as u64
    })
}

//! Order statistics, the conformal threshold and strict ranks.
//!
//! The `beta`-quantile of a sample of size `n` is its `ceil(beta * n)`-th
//! smallest element. The conformal threshold at level `a` is the
//! `ceil((1 - a)(N + 1))`-th smallest element of the calibration scores
//! augmented with `+inf`; ranks above `N` therefore give an unbounded
//! threshold and ranks below 1 give `-inf` (an empty score set).

use rand::Rng;

use crate::error::{Error, Result};

/// `ceil(x)` with products like `0.9 * 10` that land a hair above an integer
/// snapped back onto it.
fn ceil_snapped(x: f64) -> f64 {
    (x - 1e-12 * x.abs().max(1.0)).ceil()
}

/// One-based order-statistic index `ceil(beta * n)`.
pub fn order_index(beta: f64, n: usize) -> i64 {
    ceil_snapped(beta * n as f64) as i64
}

/// `ceil(beta * |values|)`-th smallest element of `values`.
pub fn empirical_quantile(beta: f64, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "quantile fraction must lie in (0, 1], got {beta}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = order_index(beta, sorted.len()).clamp(1, sorted.len() as i64);
    Ok(sorted[(k - 1) as usize])
}

/// Order statistic of `sorted ∪ {+inf}` at one-based `rank`; rank 0 or less is `-inf`.
pub fn threshold_at_rank(sorted: &[f64], rank: i64) -> f64 {
    if rank <= 0 {
        f64::NEG_INFINITY
    } else if rank as usize > sorted.len() {
        f64::INFINITY
    } else {
        sorted[rank as usize - 1]
    }
}

/// Conformal rank `ceil((1 - a)(N + 1))` for `N` calibration scores.
pub fn conformal_rank(a: f64, n_cal: usize) -> i64 {
    order_index(1.0 - a, n_cal + 1)
}

/// Conformal threshold over calibration scores that are already sorted ascending.
pub fn conformal_quantile_sorted(a: f64, sorted: &[f64]) -> f64 {
    if a <= 0.0 {
        return f64::INFINITY;
    }
    threshold_at_rank(sorted, conformal_rank(a, sorted.len()))
}

/// Conformal threshold `ceil((1 - a)(N + 1))`-th smallest of `cal_scores ∪ {+inf}`.
///
/// Returns `+inf` for `a <= 0`.
pub fn conformal_quantile(a: f64, cal_scores: &[f64]) -> Result<f64> {
    if cal_scores.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = cal_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(conformal_quantile_sorted(a, &sorted))
}

/// The two candidate ranks of the smoothed threshold and the probability of
/// picking the upper one.
///
/// With `x = (1 - a)(N + 1)`, the upper rank is `ceil(x)`, the lower is
/// `ceil(x) - 1`, and the upper is chosen with probability `x - (ceil(x) - 1)`.
/// A test score exchangeable with the calibration scores is then covered with
/// probability exactly `1 - a` for every `a` in `[0, 1]`.
pub fn smoothed_ranks(a: f64, n_cal: usize) -> (i64, i64, f64) {
    let x = (1.0 - a) * (n_cal + 1) as f64;
    let upper = ceil_snapped(x) as i64;
    let p_upper = (x - (upper - 1) as f64).clamp(0.0, 1.0);
    (upper - 1, upper, p_upper)
}

/// Smoothed threshold given a uniform draw `u` in `[0, 1)`.
pub fn smoothed_threshold_sorted(a: f64, sorted: &[f64], u: f64) -> f64 {
    if a <= 0.0 {
        return f64::INFINITY;
    }
    let (lower, upper, p_upper) = smoothed_ranks(a, sorted.len());
    let rank = if u < p_upper { upper } else { lower };
    threshold_at_rank(sorted, rank)
}

/// Randomized membership decision for a test score at level `a`.
pub fn smoothed_coverage_decision<R: Rng + ?Sized>(
    a: f64,
    cal_scores: &[f64],
    test_score: f64,
    rng: &mut R,
) -> Result<bool> {
    if cal_scores.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = cal_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let u: f64 = rng.random();
    Ok(test_score <= smoothed_threshold_sorted(a, &sorted, u))
}

/// Number of elements of an ascending slice strictly below `x`.
pub fn count_below_sorted(sorted: &[f64], x: f64) -> usize {
    sorted.partition_point(|v| *v < x)
}

/// `|{j : pool_j < x}| / denominator`.
pub fn strict_rank(x: f64, pool: &[f64], denominator: usize) -> f64 {
    assert!(denominator >= 1, "rank denominator must be positive");
    pool.iter().filter(|v| **v < x).count() as f64 / denominator as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_to(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    #[test]
    fn empirical_quantile_examples() {
        assert_eq!(empirical_quantile(1.0, &[3.0, 1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(empirical_quantile(0.9, &one_to(10)).unwrap(), 9.0);
        assert_eq!(empirical_quantile(0.5, &[7.0]).unwrap(), 7.0);
        assert!(matches!(
            empirical_quantile(0.5, &[]),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn conformal_quantile_examples() {
        let cal = one_to(9);
        assert_eq!(conformal_quantile(0.1, &cal).unwrap(), 9.0);
        assert_eq!(conformal_quantile(0.05, &cal).unwrap(), f64::INFINITY);
        assert_eq!(conformal_quantile(-0.2, &cal).unwrap(), f64::INFINITY);
        assert_eq!(conformal_quantile(0.0, &cal).unwrap(), f64::INFINITY);
        assert!(matches!(
            conformal_quantile(0.1, &[]),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn levels_above_one_give_empty_threshold() {
        let cal = one_to(9);
        // (1 - 1.05) * 10 < 0
        assert_eq!(conformal_quantile(1.05, &cal).unwrap(), f64::NEG_INFINITY);
        // (1 - 0.95) * 10 = 0.5, rank 1
        assert_eq!(conformal_quantile(0.95, &cal).unwrap(), 1.0);
    }

    #[test]
    fn strict_rank_examples() {
        assert_eq!(strict_rank(1.0, &[1.0, 2.0, 3.0], 3), 0.0);
        assert_eq!(strict_rank(2.0, &[2.0, 2.0, 2.0], 3), 0.0);
        assert!((strict_rank(2.5, &[1.0, 2.0, 3.0], 3) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn smoothed_decision_extremes_ignore_the_coin() {
        let cal = one_to(9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert!(smoothed_coverage_decision(0.1, &cal, 0.5, &mut rng).unwrap());
            assert!(!smoothed_coverage_decision(0.1, &cal, 9.5, &mut rng).unwrap());
        }
    }

    /// Covered-when-tied frequency equals the closed-form probability of
    /// drawing the upper rank, `x - (ceil(x) - 1)` with `x = (1 - a)(N + 1)`.
    #[test]
    fn smoothed_decision_tie_frequency_matches_interpolation_weight() {
        let cal = one_to(9);
        let draws = 100_000;
        // a = 0.1: x = 9, weight 1. a = 0.15: x = 8.5, weight 0.5. a = 0.33: x = 6.7, weight 0.7.
        for (a, tie, weight) in [(0.1, 9.0, 1.0), (0.15, 9.0, 0.5), (0.33, 7.0, 0.7)] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let hits = (0..draws)
                .filter(|_| smoothed_coverage_decision(a, &cal, tie, &mut rng).unwrap())
                .count();
            let freq = hits as f64 / draws as f64;
            assert!((freq - weight).abs() < 0.01, "a={a}: {freq} vs {weight}");
        }
    }

    #[test]
    fn smoothed_threshold_is_exact_on_ranks() {
        // Test rank uniform on {1..N+1}: P(rank <= chosen) must equal 1 - a.
        let n = 9;
        let sorted = one_to(n);
        for a in [0.02, 0.1, 0.137, 0.5, 0.9] {
            let (lower, upper, p) = smoothed_ranks(a, n);
            let cover = (p * upper as f64 + (1.0 - p) * lower as f64) / (n + 1) as f64;
            assert!((cover - (1.0 - a)).abs() < 1e-12);
            assert!(smoothed_threshold_sorted(a, &sorted, 0.0) >= smoothed_threshold_sorted(a, &sorted, 0.999));
        }
    }

    #[test]
    fn rounding_guard_keeps_integer_products_exact() {
        assert_eq!(conformal_rank(0.1, 9), 9);
        assert_eq!(conformal_rank(0.1, 199), 180);
        assert_eq!(conformal_rank(0.1, 200), 181);
        assert_eq!(order_index(0.7, 10), 7);
    }
}

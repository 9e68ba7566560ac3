//! Quantile budgeting: predict the rank of the next score from the series'
//! history, then map the predicted rank to a zero-mean quantile adjustment.
//!
//! The predicted rank is the strict rank of a per-series statistic among the
//! same statistic of the `N` calibration series, so it lives on the grid
//! `{0, 1/N, ..., 1}` and is uniform on it when the series are exchangeable.
//! The conservative budgeter
//!
//! ```text
//! g(r) = C * (r - (1 - alpha))   if r < 1 - alpha
//!        r - (1 - alpha)         otherwise
//! ```
//!
//! uses the coefficient `C` that makes its mean over that grid exactly zero.

use crate::error::{Error, Result};
use crate::types::{AggressiveForm, Budgeter, CoefficientMode, MethodConfig, Predictor};

fn floor_snapped(x: f64) -> f64 {
    (x + 1e-12 * x.abs().max(1.0)).floor()
}

fn ceil_snapped(x: f64) -> f64 {
    (x - 1e-12 * x.abs().max(1.0)).ceil()
}

/// `sum_{t'=1..t} |e_t'| / t * beta^(t - t')`, normalized by `t` rather than by the weight sum.
pub fn decayed_mean_residual(residuals: &[f64], beta: f64) -> Result<f64> {
    decayed_mean_residual_path(residuals, beta)
        .last()
        .copied()
        .ok_or(Error::NoHistory)
}

/// [`decayed_mean_residual`] of every prefix of `residuals`.
pub fn decayed_mean_residual_path(residuals: &[f64], beta: f64) -> Vec<f64> {
    let mut acc = 0.0;
    residuals
        .iter()
        .enumerate()
        .map(|(s, r)| {
            acc = beta * acc + r;
            acc / (s + 1) as f64
        })
        .collect()
}

/// Running state of the exponentially weighted rank average
/// `sum beta^(t+1-t') r_t' / sum beta^(t+1-t')`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DecayedRankMean {
    weighted: f64,
    weight: f64,
}

impl DecayedRankMean {
    pub fn push(&mut self, rank: f64, beta: f64) {
        self.weighted = beta * (self.weighted + rank);
        self.weight = beta * (self.weight + 1.0);
    }

    pub fn value(&self) -> Option<f64> {
        (self.weight > 0.0).then(|| self.weighted / self.weight)
    }
}

pub fn decayed_mean_rank(ranks: &[f64], beta: f64) -> Result<f64> {
    let mut m = DecayedRankMean::default();
    for r in ranks {
        m.push(*r, beta);
    }
    m.value().ok_or(Error::NoHistory)
}

/// Strict rank of `test_statistic` among the calibration statistics, over `N`.
pub fn predict_rank(test_statistic: f64, calibration_statistics: &[f64]) -> Result<f64> {
    if calibration_statistics.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(crate::quantile::strict_rank(
        test_statistic,
        calibration_statistics,
        calibration_statistics.len(),
    ))
}

/// Budget coefficient for the conservative budgeter.
///
/// Exact mode: `(aN + e)(aN + 1 - e) / (((1-a)N + e)((1-a)N + 1 - e))` with
/// `e = aN - floor(aN)`. Practical mode: `a^2 / (1 - a)^2`, independent of `N`.
pub fn coefficient_c(alpha: f64, n: usize, mode: CoefficientMode) -> f64 {
    match mode {
        CoefficientMode::Practical => alpha * alpha / ((1.0 - alpha) * (1.0 - alpha)),
        CoefficientMode::Exact => {
            let n = n as f64;
            let an = alpha * n;
            let eps = (an - floor_snapped(an)).max(0.0);
            let bn = (1.0 - alpha) * n;
            ((an + eps) * (an + 1.0 - eps)) / ((bn + eps) * (bn + 1.0 - eps))
        }
    }
}

/// The exact coefficient written with floors and ceilings:
/// `(2aN - floor(aN))(floor(aN) + 1) / (ceil((1-a)N) ((1-2a)N + 1 + floor(aN)))`.
pub fn coefficient_c_floor_form(alpha: f64, n: usize) -> f64 {
    let n = n as f64;
    let fl = floor_snapped(alpha * n);
    let ce = ceil_snapped((1.0 - alpha) * n);
    ((2.0 * alpha * n - fl) * (fl + 1.0)) / (ce * ((1.0 - 2.0 * alpha) * n + 1.0 + fl))
}

pub fn budget_conservative(r_hat: f64, alpha: f64, c: f64) -> f64 {
    let d = r_hat - (1.0 - alpha);
    if d < 0.0 {
        c * d
    } else {
        d
    }
}

/// `2 * alpha * (r - 0.5)`: the level `alpha - delta` spans `[0, 2 * alpha]`.
pub fn budget_aggressive(r_hat: f64, alpha: f64) -> f64 {
    2.0 * alpha * (r_hat - 0.5)
}

/// `(r - 0.5) / (2 * alpha)`, the compatibility variant. For `alpha < 0.5`
/// it can push the level above 1.
pub fn budget_aggressive_divided(r_hat: f64, alpha: f64) -> f64 {
    (r_hat - 0.5) / (2.0 * alpha)
}

/// Scale `lambda = min(1, (alpha - floor) / max_delta)` that keeps `alpha - lambda * delta >= floor`.
pub fn level_floor_scale(alpha: f64, level_floor: f64, max_delta: f64) -> f64 {
    if max_delta <= 0.0 {
        return 1.0;
    }
    ((alpha - level_floor) / max_delta).clamp(0.0, 1.0)
}

pub fn apply_level_floor(delta_hat: f64, alpha: f64, level_floor: f64, max_delta: f64) -> f64 {
    level_floor_scale(alpha, level_floor, max_delta) * delta_hat
}

/// `((alpha + 1/2N) / (1 - alpha + 1/2N))^2 * (1 - alpha)`: the largest coverage
/// the conservative budgeter can give up relative to `1 - alpha`.
pub fn worst_case_loss_bound(alpha: f64, n: usize) -> f64 {
    let h = 1.0 / (2.0 * n as f64);
    ((alpha + h) / (1.0 - alpha + h)).powi(2) * (1.0 - alpha)
}

/// Budgeting parameters resolved for a calibration set of size `n_cal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetParams {
    pub alpha: f64,
    pub n_cal: usize,
    pub coefficient_mode: CoefficientMode,
    pub budgeter: Budgeter,
    pub aggressive_form: AggressiveForm,
    pub predictor: Predictor,
    pub beta: f64,
    pub level_floor: f64,
}

impl BudgetParams {
    pub fn from_config(config: &MethodConfig, n_cal: usize) -> Self {
        Self {
            alpha: config.alpha,
            n_cal,
            coefficient_mode: config.coefficient_mode,
            budgeter: config.budgeter,
            aggressive_form: config.aggressive_form,
            predictor: config.predictor,
            beta: config.beta,
            level_floor: config.level_floor,
        }
    }

    pub fn coefficient(&self) -> f64 {
        coefficient_c(self.alpha, self.n_cal, self.coefficient_mode)
    }

    /// Unscaled adjustment for a predicted rank.
    pub fn raw_delta(&self, r_hat: f64) -> f64 {
        match (self.budgeter, self.aggressive_form) {
            (Budgeter::Conservative, _) => budget_conservative(r_hat, self.alpha, self.coefficient()),
            (Budgeter::Aggressive, AggressiveForm::Multiplicative) => budget_aggressive(r_hat, self.alpha),
            (Budgeter::Aggressive, AggressiveForm::Divided) => budget_aggressive_divided(r_hat, self.alpha),
        }
    }

    /// Supremum of [`raw_delta`](Self::raw_delta) over `r_hat` in `[0, 1]`.
    pub fn max_delta(&self) -> f64 {
        self.raw_delta(1.0)
    }
}

/// Maps predicted ranks to scaled adjustments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetAdjuster {
    pub params: BudgetParams,
    pub lambda: f64,
}

impl BudgetAdjuster {
    pub fn new(params: BudgetParams) -> Self {
        let lambda = level_floor_scale(params.alpha, params.level_floor, params.max_delta());
        Self { params, lambda }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn delta(&self, r_hat: f64) -> f64 {
        self.lambda * self.params.raw_delta(r_hat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn decayed_mean_residual_examples() {
        assert_eq!(decayed_mean_residual(&[1.0], 0.8).unwrap(), 1.0);
        assert_abs_diff_eq!(decayed_mean_residual(&[1.0, 1.0], 0.8).unwrap(), 0.9, epsilon = 1e-15);
        assert_eq!(decayed_mean_residual(&[0.0, 0.0, 0.0], 0.8).unwrap(), 0.0);
        assert!(matches!(decayed_mean_residual(&[], 0.8), Err(Error::NoHistory)));
    }

    #[test]
    fn decayed_mean_residual_matches_direct_sum() {
        let res = [0.3, 1.7, 0.2, 2.5, 0.9];
        let beta: f64 = 0.8;
        let t = res.len();
        let direct: f64 = (1..=t)
            .map(|tp| res[tp - 1] / t as f64 * beta.powi((t - tp) as i32))
            .sum();
        assert_abs_diff_eq!(decayed_mean_residual(&res, beta).unwrap(), direct, epsilon = 1e-14);
    }

    #[test]
    fn decayed_mean_rank_examples() {
        assert_abs_diff_eq!(decayed_mean_rank(&[0.5; 6], 0.8).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            decayed_mean_rank(&[0.0, 1.0], 0.8).unwrap(),
            0.8 / (0.64 + 0.8),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(decayed_mean_rank(&[0.0, 1.0], 0.8).unwrap(), 0.5556, epsilon = 1e-4);
        assert_eq!(decayed_mean_rank(&[1.0], 0.8).unwrap(), 1.0);
        assert!(decayed_mean_rank(&[], 0.8).is_err());
    }

    #[test]
    fn predict_rank_examples() {
        assert_eq!(predict_rank(0.0, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(predict_rank(4.0, &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(predict_rank(2.5, &[1.0, 2.0, 3.0]).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn coefficient_examples() {
        assert_abs_diff_eq!(coefficient_c(0.1, 100, CoefficientMode::Exact), 110.0 / 8190.0, epsilon = 1e-15);
        assert_abs_diff_eq!(coefficient_c(0.1, 100, CoefficientMode::Exact), 0.0134310, epsilon = 1e-7);
        assert_abs_diff_eq!(coefficient_c(0.1, 7, CoefficientMode::Practical), 0.01 / 0.81, epsilon = 1e-15);
        assert_abs_diff_eq!(coefficient_c(0.1, 100, CoefficientMode::Practical), 0.0123457, epsilon = 1e-7);
        for n in [2, 10, 64, 1000] {
            assert_abs_diff_eq!(coefficient_c(0.5, n, CoefficientMode::Exact), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn coefficient_forms_agree() {
        for alpha in [0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.37, 0.45, 0.5] {
            for n in [1, 2, 3, 7, 10, 37, 50, 99, 100, 137, 1000, 4321] {
                let a = coefficient_c(alpha, n, CoefficientMode::Exact);
                let b = coefficient_c_floor_form(alpha, n);
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conservative_examples() {
        let c = coefficient_c(0.1, 100, CoefficientMode::Practical);
        assert_eq!(budget_conservative(0.9, 0.1, c), 0.0);
        assert_abs_diff_eq!(budget_conservative(1.0, 0.1, c), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(budget_conservative(0.0, 0.1, c), -0.0111111, epsilon = 1e-7);
        assert_abs_diff_eq!(budget_conservative(0.0, 0.1, c), -0.9 / 81.0, epsilon = 1e-15);
    }

    #[test]
    fn aggressive_examples() {
        assert_eq!(budget_aggressive(0.5, 0.1), 0.0);
        assert_abs_diff_eq!(0.1 - budget_aggressive(1.0, 0.1), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(0.1 - budget_aggressive(0.0, 0.1), 0.2, epsilon = 1e-15);
        // the divided form leaves [0, 1] for small alpha
        assert!(0.1 - budget_aggressive_divided(0.0, 0.1) > 1.0);
    }

    #[test]
    fn level_floor_examples() {
        let lambda = level_floor_scale(0.1, 0.01, 0.1);
        assert_abs_diff_eq!(lambda, 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(apply_level_floor(0.1, 0.1, 0.01, 0.1), 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(0.1 - apply_level_floor(0.1, 0.1, 0.01, 0.1), 0.01, epsilon = 1e-15);
        assert_eq!(apply_level_floor(0.0, 0.1, 0.05, 0.1), 0.0);
        assert_eq!(level_floor_scale(0.1, 0.0, 0.1), 1.0);
        assert_eq!(apply_level_floor(0.07, 0.1, 0.0, 0.1), 0.07);
    }

    #[test]
    fn floored_levels_respect_the_floor() {
        for budgeter in Budgeter::ALL {
            let params = BudgetParams {
                alpha: 0.1,
                n_cal: 100,
                coefficient_mode: CoefficientMode::Exact,
                budgeter: *budgeter,
                aggressive_form: AggressiveForm::Multiplicative,
                predictor: Predictor::Ms,
                beta: 0.8,
                level_floor: 0.01,
            };
            let adj = BudgetAdjuster::new(params);
            for j in 0..=100 {
                let a = 0.1 - adj.delta(j as f64 / 100.0);
                assert!(a >= 0.01 - 1e-15, "{budgeter}: level {a}");
            }
        }
    }

    #[test]
    fn zero_mean_over_the_rank_grid() {
        for alpha in [0.05, 0.1, 0.2, 0.3] {
            for n in [37, 50, 100, 137] {
                let c = coefficient_c(alpha, n, CoefficientMode::Exact);
                let mean: f64 = (0..=n)
                    .map(|j| budget_conservative(j as f64 / n as f64, alpha, c))
                    .sum::<f64>()
                    / (n + 1) as f64;
                assert!(mean.abs() < 1e-10, "alpha={alpha} n={n}: {mean}");
                let agg: f64 = (0..=n).map(|j| budget_aggressive(j as f64 / n as f64, alpha)).sum::<f64>();
                assert!(agg.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn worst_case_loss_is_about_twelve_thousandths() {
        let bound = worst_case_loss_bound(0.1, 100);
        assert!((bound - 0.012).abs() < 0.001, "{bound}");
        // the realized deflation never exceeds the bound
        for n in [37, 50, 100, 137, 1000] {
            let c = coefficient_c(0.1, n, CoefficientMode::Exact);
            assert!(-budget_conservative(0.0, 0.1, c) <= worst_case_loss_bound(0.1, n) + 1e-15);
        }
    }

    #[test]
    fn budgeters_are_monotone() {
        let c = coefficient_c(0.2, 50, CoefficientMode::Exact);
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for j in 0..=1000 {
            let r = j as f64 / 1000.0;
            let cur = (budget_conservative(r, 0.2, c), budget_aggressive(r, 0.2));
            assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
            prev = cur;
        }
    }
}

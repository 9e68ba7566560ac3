//! Per-step calibration and interval construction over a panel.
//!
//! For every test series and step `t` the pipeline
//!
//! 1. takes the calibration scores at `t` (static, never updated with test outcomes),
//! 2. asks the series' adjuster for `delta` using only information before `t`,
//! 3. queries the conformal threshold at level `alpha - delta`,
//! 4. turns it into an interval with the series' forecasts at `t`,
//! 5. records coverage and feeds the outcome back to the adjuster.
//!
//! Test series never see each other, so they are processed in parallel.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{decayed_mean_residual_path, BudgetAdjuster, BudgetParams, DecayedRankMean};
use crate::error::{Error, Result};
use crate::feedback::ErrorAdjuster;
use crate::quantile::{conformal_quantile_sorted, count_below_sorted, smoothed_threshold_sorted};
use crate::scores::{interval_from_threshold, score_panel, SeriesForecasts};
use crate::seed::derived_rng;
use crate::types::{
    ForecastPanel, IntervalCell, IntervalPanel, Method, MethodConfig, Predictor, ScorePanel, Split,
};

/// Steps over which metrics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// The last `k` steps.
    LastK(usize),
    Full,
}

impl Default for Window {
    fn default() -> Self {
        Window::LastK(20)
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::LastK(k) => write!(f, "last{k}"),
            Window::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Window::Full);
        }
        s.strip_prefix("last")
            .and_then(|k| k.trim_start_matches(['_', '-']).parse().ok())
            .filter(|k| *k > 0)
            .map(Window::LastK)
            .ok_or_else(|| Error::InvalidConfig(format!("window must be 'full' or 'lastK', got '{s}'")))
    }
}

/// Step indices covered by `window` for a horizon of `horizon` steps.
pub fn evaluation_window(horizon: usize, window: Window) -> Result<Range<usize>> {
    match window {
        Window::Full => Ok(0..horizon),
        Window::LastK(k) if k > horizon => Err(Error::WindowTooLong { k, horizon }),
        Window::LastK(k) => Ok(horizon - k..horizon),
    }
}

/// What a custom adjustment sees at one step of one test series.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    /// Position of the series among the test series, in panel order.
    pub test_position: usize,
    pub series_id: &'a str,
    pub t: usize,
    pub alpha: f64,
    /// Strict rank of this step's test score among the calibration scores
    /// and itself, over `N + 1`. Only an oracle or adversary may look at it.
    pub realized_rank: f64,
}

/// Shared, read-only per-step calibration data.
struct Context<'a> {
    panel: &'a ForecastPanel,
    config: &'a MethodConfig,
    scores: ScorePanel,
    cal: Vec<usize>,
    test: Vec<usize>,
    /// Sorted calibration scores per step.
    sorted_cal: Vec<Vec<f64>>,
}

impl<'a> Context<'a> {
    fn new(panel: &'a ForecastPanel, config: &'a MethodConfig) -> Result<Self> {
        config.validate()?;
        let cal = panel.indices(Split::Calibration);
        let test = panel.indices(Split::Test);
        if cal.is_empty() {
            return Err(Error::InvalidPanel("calibration split is empty".into()));
        }
        if test.is_empty() {
            return Err(Error::InvalidPanel("test split is empty".into()));
        }
        let scores = score_panel(panel, config.score, config.scale, config.beta)?;
        let sorted_cal = (0..panel.horizon())
            .map(|t| {
                let mut v: Vec<f64> = cal.iter().map(|&j| scores.get(j, t)).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        Ok(Self {
            panel,
            config,
            scores,
            cal,
            test,
            sorted_cal,
        })
    }

    fn n_cal(&self) -> usize {
        self.cal.len()
    }

    fn realized_rank(&self, series: usize, t: usize) -> f64 {
        count_below_sorted(&self.sorted_cal[t], self.scores.get(series, t)) as f64 / (self.n_cal() + 1) as f64
    }

    fn rng(&self, series: usize) -> ChaCha8Rng {
        derived_rng(self.config.seed, self.panel.id(series).as_bytes())
    }

    /// Runs every test series with adjusters built by `make`.
    fn run<A, F>(&self, make: F) -> Result<IntervalPanel>
    where
        A: SeriesAdjuster,
        F: Fn(usize, usize) -> A + Sync,
    {
        let rows: Result<Vec<Vec<IntervalCell>>> = self
            .test
            .par_iter()
            .enumerate()
            .map(|(pos, &series)| self.run_series(pos, series, make(pos, series)))
            .collect();
        let ids = self.test.iter().map(|&i| self.panel.id(i).to_string()).collect();
        IntervalPanel::from_rows(ids, self.panel.horizon(), rows?)
    }

    fn run_series<A: SeriesAdjuster>(&self, pos: usize, series: usize, mut adj: A) -> Result<Vec<IntervalCell>> {
        let alpha = self.config.alpha;
        let forecasts = SeriesForecasts::resolve(self.panel, series, self.config.scale, self.config.beta);
        let y = self.panel.y(series);
        let mut rng = self.rng(series);
        let mut row = Vec::with_capacity(self.panel.horizon());
        for (t, &y_t) in y.iter().enumerate() {
            let delta = adj.delta(self, pos, series, t);
            let level = alpha - delta;
            let sorted = &self.sorted_cal[t];
            let threshold = if self.config.smoothing {
                let u: f64 = rng.random();
                smoothed_threshold_sorted(level, sorted, u)
            } else {
                conformal_quantile_sorted(level, sorted)
            };
            let (lo, hi) = interval_from_threshold(self.config.score, &forecasts.cell(t), threshold)?;
            let covered = lo <= y_t && y_t <= hi;
            adj.observe(self, series, t, !covered);
            row.push(IntervalCell {
                lo,
                hi,
                level,
                covered,
            });
        }
        Ok(row)
    }
}

/// Per-series adjustment strategy. `delta` for step `t` is requested before
/// the outcome at `t` is known; `observe` then reveals it.
trait SeriesAdjuster {
    fn delta(&mut self, ctx: &Context<'_>, pos: usize, series: usize, t: usize) -> f64;
    fn observe(&mut self, _ctx: &Context<'_>, _series: usize, _t: usize, _err: bool) {}
}

struct NoAdjustment;

impl SeriesAdjuster for NoAdjustment {
    fn delta(&mut self, _: &Context<'_>, _: usize, _: usize, _: usize) -> f64 {
        0.0
    }
}

impl SeriesAdjuster for ErrorAdjuster {
    fn delta(&mut self, _: &Context<'_>, _: usize, _: usize, _: usize) -> f64 {
        ErrorAdjuster::delta(self)
    }

    fn observe(&mut self, _: &Context<'_>, _: usize, _: usize, err: bool) {
        ErrorAdjuster::observe(self, err);
    }
}

struct CustomAdjustment<'f> {
    f: &'f (dyn Fn(&StepView<'_>) -> f64 + Sync),
}

impl SeriesAdjuster for CustomAdjustment<'_> {
    fn delta(&mut self, ctx: &Context<'_>, pos: usize, series: usize, t: usize) -> f64 {
        (self.f)(&StepView {
            test_position: pos,
            series_id: ctx.panel.id(series),
            t,
            alpha: ctx.config.alpha,
            realized_rank: ctx.realized_rank(series, t),
        })
    }
}

/// Decayed mean residuals of every series, with the calibration cross-section sorted per step.
struct MsStatistics {
    per_series: Vec<Vec<f64>>,
    sorted_cal: Vec<Vec<f64>>,
}

impl MsStatistics {
    fn new(ctx: &Context<'_>) -> Self {
        let panel = ctx.panel;
        let per_series: Vec<Vec<f64>> = (0..panel.n_series())
            .map(|i| {
                let res: Vec<f64> = panel
                    .y(i)
                    .iter()
                    .zip(panel.y_hat(i))
                    .map(|(y, f)| (y - f).abs())
                    .collect();
                decayed_mean_residual_path(&res, ctx.config.beta)
            })
            .collect();
        let sorted_cal = (0..panel.horizon())
            .map(|t| {
                let mut v: Vec<f64> = ctx.cal.iter().map(|&j| per_series[j][t]).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        Self { per_series, sorted_cal }
    }
}

struct MsBudget<'s> {
    stats: &'s MsStatistics,
    adjuster: BudgetAdjuster,
}

impl SeriesAdjuster for MsBudget<'_> {
    fn delta(&mut self, ctx: &Context<'_>, _: usize, series: usize, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let own = self.stats.per_series[series][t - 1];
        let r_hat = count_below_sorted(&self.stats.sorted_cal[t - 1], own) as f64 / ctx.n_cal() as f64;
        self.adjuster.delta(r_hat)
    }
}

/// For every step, how many calibration scores lie strictly below each calibration score.
struct CalBelow(Vec<Vec<usize>>);

impl CalBelow {
    fn new(ctx: &Context<'_>) -> Self {
        Self(
            (0..ctx.panel.horizon())
                .map(|t| {
                    ctx.cal
                        .iter()
                        .map(|&j| count_below_sorted(&ctx.sorted_cal[t], ctx.scores.get(j, t)))
                        .collect()
                })
                .collect(),
        )
    }
}

/// Rank-average predictor: ranks are taken within the pool formed by the
/// calibration series and the test series itself.
struct EwaBudget<'s> {
    cal_below: &'s CalBelow,
    adjuster: BudgetAdjuster,
    beta: f64,
    own: DecayedRankMean,
    cal: Vec<DecayedRankMean>,
}

impl SeriesAdjuster for EwaBudget<'_> {
    fn delta(&mut self, ctx: &Context<'_>, _: usize, _: usize, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let own = self.own.value().expect("rank history present after step 0");
        let below = self
            .cal
            .iter()
            .filter(|m| m.value().is_some_and(|v| v < own))
            .count();
        self.adjuster.delta(below as f64 / ctx.n_cal() as f64)
    }

    fn observe(&mut self, ctx: &Context<'_>, series: usize, t: usize, _: bool) {
        let pool = (ctx.n_cal() + 1) as f64;
        let v = ctx.scores.get(series, t);
        self.own.push(count_below_sorted(&ctx.sorted_cal[t], v) as f64 / pool, self.beta);
        for ((m, &j), below) in self.cal.iter_mut().zip(&ctx.cal).zip(&self.cal_below.0[t]) {
            let extra = usize::from(v < ctx.scores.get(j, t));
            m.push((below + extra) as f64 / pool, self.beta);
        }
    }
}

/// Runs the method selected by `config` over every test series.
pub fn run_method(panel: &ForecastPanel, config: &MethodConfig) -> Result<IntervalPanel> {
    match config.method {
        Method::Split => {
            let ctx = Context::new(panel, config)?;
            ctx.run(|_, _| NoAdjustment)
        }
        Method::TqaBudget => {
            let n_cal = panel.count(Split::Calibration);
            let adjuster = BudgetAdjuster::new(BudgetParams::from_config(config, n_cal));
            run_budget(panel, config, &adjuster)
        }
        Method::TqaError => {
            let ctx = Context::new(panel, config)?;
            ctx.run(|_, _| ErrorAdjuster::new(config.alpha, config.gamma, config.error_variant))
        }
    }
}

/// Budget path with an explicit adjuster (e.g. a custom `lambda`).
pub fn run_budget(panel: &ForecastPanel, config: &MethodConfig, adjuster: &BudgetAdjuster) -> Result<IntervalPanel> {
    let ctx = Context::new(panel, config)?;
    match adjuster.params.predictor {
        Predictor::Ms => {
            let stats = MsStatistics::new(&ctx);
            ctx.run(|_, _| MsBudget {
                stats: &stats,
                adjuster: *adjuster,
            })
        }
        Predictor::Ewa => {
            let cal_below = CalBelow::new(&ctx);
            ctx.run(|_, _| EwaBudget {
                cal_below: &cal_below,
                adjuster: *adjuster,
                beta: config.beta,
                own: DecayedRankMean::default(),
                cal: vec![DecayedRankMean::default(); ctx.n_cal()],
            })
        }
    }
}

/// Runs the panel with adjustments supplied by `delta`, called once per
/// `(test series, t)`. `config.method` is ignored.
pub fn run_with_adjustment(
    panel: &ForecastPanel,
    config: &MethodConfig,
    delta: &(dyn Fn(&StepView<'_>) -> f64 + Sync),
) -> Result<IntervalPanel> {
    let ctx = Context::new(panel, config)?;
    ctx.run(|_, _| CustomAdjustment { f: delta })
}

/// Predicted ranks the budget path would use for each test series and step
/// (`None` at `t = 0`).
pub fn predicted_ranks(panel: &ForecastPanel, config: &MethodConfig) -> Result<Vec<Vec<Option<f64>>>> {
    let ctx = Context::new(panel, config)?;
    let n = ctx.n_cal() as f64;
    match config.predictor {
        Predictor::Ms => {
            let stats = MsStatistics::new(&ctx);
            Ok(ctx
                .test
                .iter()
                .map(|&i| {
                    (0..panel.horizon())
                        .map(|t| {
                            (t > 0).then(|| {
                                count_below_sorted(&stats.sorted_cal[t - 1], stats.per_series[i][t - 1]) as f64 / n
                            })
                        })
                        .collect()
                })
                .collect())
        }
        Predictor::Ewa => {
            let cal_below = CalBelow::new(&ctx);
            let identity = BudgetAdjuster::new(BudgetParams::from_config(config, ctx.n_cal())).with_lambda(1.0);
            Ok(ctx
                .test
                .iter()
                .map(|&i| {
                    let mut adj = EwaBudget {
                        cal_below: &cal_below,
                        adjuster: identity,
                        beta: config.beta,
                        own: DecayedRankMean::default(),
                        cal: vec![DecayedRankMean::default(); ctx.n_cal()],
                    };
                    (0..panel.horizon())
                        .map(|t| {
                            let r = (t > 0).then(|| {
                                let own = adj.own.value().unwrap();
                                adj.cal.iter().filter(|m| m.value().is_some_and(|v| v < own)).count() as f64 / n
                            });
                            adj.observe(&ctx, i, t, false);
                            r
                        })
                        .collect()
                })
                .collect())
        }
    }
}

/// Scores of every series under `config`.
pub fn scores(panel: &ForecastPanel, config: &MethodConfig) -> Result<ScorePanel> {
    score_panel(panel, config.score, config.scale, config.beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ScoreKind, Series};

    fn panel_from(cal: &[Vec<f64>], test: &[Vec<f64>]) -> ForecastPanel {
        let mut series = Vec::new();
        for (i, y) in cal.iter().enumerate() {
            series.push(Series::new(format!("c{i:03}"), Split::Calibration, y.clone(), vec![0.0; y.len()]));
        }
        for (i, y) in test.iter().enumerate() {
            series.push(Series::new(format!("t{i:03}"), Split::Test, y.clone(), vec![0.0; y.len()]));
        }
        ForecastPanel::from_series(series).unwrap()
    }

    #[test]
    fn windows() {
        assert_eq!(evaluation_window(30, Window::LastK(20)).unwrap(), 10..30);
        assert_eq!(evaluation_window(30, Window::Full).unwrap(), 0..30);
        assert_eq!(evaluation_window(30, Window::LastK(30)).unwrap(), 0..30);
        assert!(matches!(
            evaluation_window(30, Window::LastK(40)),
            Err(Error::WindowTooLong { k: 40, horizon: 30 })
        ));
        assert_eq!("last20".parse::<Window>().unwrap(), Window::LastK(20));
        assert_eq!("full".parse::<Window>().unwrap(), Window::Full);
        assert!("last0".parse::<Window>().is_err());
        assert_eq!(Window::LastK(20).to_string(), "last20");
    }

    #[test]
    fn dominated_test_scores_are_always_covered() {
        let cal: Vec<Vec<f64>> = (1..=20).map(|k| vec![k as f64; 5]).collect();
        let test: Vec<Vec<f64>> = (0..7).map(|k| vec![0.5 + k as f64; 5]).collect();
        let panel = panel_from(&cal, &test);
        let out = run_method(&panel, &MethodConfig::new(Method::Split)).unwrap();
        for i in 0..out.n_series() {
            assert!(out.covered(i).iter().all(|c| *c));
        }
    }

    #[test]
    fn constant_panel_gives_point_intervals() {
        let cal = vec![vec![0.0; 4]; 12];
        let test = vec![vec![0.0; 4]; 3];
        let panel = panel_from(&cal, &test);
        for method in Method::ALL {
            let out = run_method(&panel, &MethodConfig::new(*method)).unwrap();
            for i in 0..out.n_series() {
                for c in out.row(i) {
                    assert_eq!((c.lo, c.hi), (0.0, 0.0), "{method}");
                    assert!(c.covered);
                }
            }
        }
    }

    #[test]
    fn nonpositive_levels_give_unbounded_covered_cells() {
        let cal: Vec<Vec<f64>> = (1..=20).map(|k| vec![k as f64; 3]).collect();
        let panel = panel_from(&cal, &[vec![1e6; 3]]);
        let out = run_with_adjustment(&panel, &MethodConfig::default(), &|v| if v.t == 1 { 0.2 } else { 0.0 }).unwrap();
        let c = out.cell(0, 1);
        assert!(c.level < 0.0);
        assert_eq!((c.lo, c.hi), (f64::NEG_INFINITY, f64::INFINITY));
        assert!(c.covered);
        assert!(!out.cell(0, 0).covered);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let panel = panel_from(&[vec![1.0; 3]], &[]);
        assert!(run_method(&panel, &MethodConfig::default()).is_err());
    }

    #[test]
    fn missing_channel_is_reported() {
        let panel = panel_from(&[vec![1.0; 3]], &[vec![1.0; 3]]);
        let cfg = MethodConfig {
            score: ScoreKind::NormalizedResidual,
            ..MethodConfig::default()
        };
        let err = run_method(&panel, &cfg).unwrap_err();
        assert!(err.to_string().contains("sigma_hat"));
        let cfg = MethodConfig {
            score: ScoreKind::Cqr,
            ..MethodConfig::default()
        };
        assert!(run_method(&panel, &cfg).unwrap_err().to_string().contains("q_lo"));
    }

    #[test]
    fn realized_rank_is_strict_over_n_plus_one() {
        let cal: Vec<Vec<f64>> = (1..=4).map(|k| vec![k as f64]).collect();
        let panel = panel_from(&cal, &[vec![2.5]]);
        let seen = std::sync::Mutex::new(Vec::new());
        run_with_adjustment(&panel, &MethodConfig::default(), &|v| {
            seen.lock().unwrap().push(v.realized_rank);
            0.0
        })
        .unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![2.0 / 5.0]);
    }
}

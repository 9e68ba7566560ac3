//! Monte-Carlo and exact checks of the guarantees the adjusters come with.
//!
//! Each check returns the observed statistic, the bound it is compared
//! against, and whether it passed. Monte-Carlo checks allow three standard
//! errors (computed across replications) of slack.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::MeanSd;
use crate::budget::{budget_conservative, coefficient_c, worst_case_loss_bound, BudgetParams};
use crate::error::{Error, Result};
use crate::feedback::{error_rate_bound, ErrorAdjuster};
use crate::pipeline::{run_method, run_with_adjustment};
use crate::seed::indexed_rng;
use crate::synth::{generate_panel, Dependence, SynthSpec};
use crate::types::{CoefficientMode, ErrorVariant, IntervalPanel, Method, MethodConfig};

/// The available checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Zero-mean level noise independent of the test scores does not lower coverage.
    NoWorseUnderNoise,
    /// The conservative budgeter averages to exactly zero over the rank grid.
    ZeroMeanBudget,
    /// Coverage under the worst predicted ranks loses at most the closed-form bound.
    WorstCaseLoss,
    /// With smoothing, the error adjuster's mean level does not exceed `alpha`.
    FeedbackLevel,
    /// The error adjuster's running error rate obeys its deterministic bound.
    ErrorRateBound,
}

impl Check {
    pub const ALL: &'static [Check] = &[
        Check::NoWorseUnderNoise,
        Check::ZeroMeanBudget,
        Check::WorstCaseLoss,
        Check::FeedbackLevel,
        Check::ErrorRateBound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Check::NoWorseUnderNoise => "no_worse_under_noise",
            Check::ZeroMeanBudget => "zero_mean_budget",
            Check::WorstCaseLoss => "worst_case_loss",
            Check::FeedbackLevel => "feedback_level",
            Check::ErrorRateBound => "error_rate_bound",
        }
    }

    /// Compact alias accepted wherever a check name is parsed.
    pub fn short_id(self) -> &'static str {
        match self {
            Check::NoWorseUnderNoise => "thm2",
            Check::ZeroMeanBudget => "thm3",
            Check::WorstCaseLoss => "thm4",
            Check::FeedbackLevel => "thm5",
            Check::ErrorRateBound => "thm6",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s || c.short_id() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Check::ALL.iter().map(|c| c.as_str()).collect();
                Error::InvalidConfig(format!("unknown check '{s}', expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyParams {
    pub alpha: f64,
    pub n_cal: usize,
    pub n_test: usize,
    pub horizon: usize,
    pub replications: usize,
    pub gamma: f64,
    /// Sequence length for the error-rate check.
    pub steps: usize,
    /// Half-width of the uniform level noise for the no-worse check.
    pub noise: f64,
    pub error_variant: ErrorVariant,
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            n_cal: 200,
            n_test: 500,
            horizon: 30,
            replications: 50,
            gamma: 0.005,
            steps: 10_000,
            noise: 0.05,
            error_variant: ErrorVariant::Asymptotic,
            seed: 0,
        }
    }
}

impl VerifyParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 0.5], got {}", self.alpha)));
        }
        if self.n_cal == 0 || self.n_test == 0 || self.horizon == 0 || self.replications == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("sizes and replication counts must be positive".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be non-negative, got {}", self.noise)));
        }
        Ok(())
    }

    fn panel_spec(&self, replication: usize) -> SynthSpec {
        SynthSpec {
            n_train: 1,
            n_cal: self.n_cal,
            n_test: self.n_test,
            horizon: self.horizon,
            dependence: Dependence::Independent,
            drift: 0.0,
            seed: self.seed.wrapping_add(replication as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub check: Check,
    pub pass: bool,
    pub statistic: f64,
    pub bound: f64,
    /// Standard error of the statistic across replications, for Monte-Carlo checks.
    pub stderr: Option<f64>,
    pub replications: usize,
    pub detail: String,
}

/// Runs one check.
pub fn verify(check: Check, params: &VerifyParams) -> Result<VerifyReport> {
    params.validate()?;
    match check {
        Check::NoWorseUnderNoise => no_worse_under_noise(params),
        Check::ZeroMeanBudget => Ok(zero_mean_budget(params)),
        Check::WorstCaseLoss => worst_case_loss(params),
        Check::FeedbackLevel => feedback_level(params),
        Check::ErrorRateBound => Ok(error_rate(params)),
    }
}

fn mean_coverage(intervals: &IntervalPanel) -> f64 {
    let n = intervals.n_series() * intervals.horizon();
    (0..intervals.n_series())
        .map(|i| intervals.covered(i).iter().filter(|c| **c).count())
        .sum::<usize>() as f64
        / n as f64
}

fn replicate<F>(params: &VerifyParams, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    (0..params.replications).into_par_iter().map(f).collect()
}

fn no_worse_under_noise(params: &VerifyParams) -> Result<VerifyReport> {
    if params.noise >= params.alpha {
        return Err(Error::InvalidConfig(format!(
            "noise {} must stay below alpha {}",
            params.noise, params.alpha
        )));
    }
    let config = MethodConfig {
        alpha: params.alpha,
        ..MethodConfig::default()
    };
    let coverages = replicate(params, |r| {
        let spec = params.panel_spec(r);
        let panel = generate_panel(&spec)?;
        let noise: Vec<Vec<f64>> = (0..params.n_test)
            .map(|i| {
                let mut rng = indexed_rng(spec.seed, "verify/level-noise", i as u64);
                (0..params.horizon)
                    .map(|_| params.noise * (2.0 * rng.random::<f64>() - 1.0))
                    .collect()
            })
            .collect();
        let intervals = run_with_adjustment(&panel, &config, &|v| noise[v.test_position][v.t])?;
        Ok(mean_coverage(&intervals))
    })?;
    let m = MeanSd::of(&coverages);
    let se = m.stderr(coverages.len());
    let bound = 1.0 - params.alpha;
    Ok(VerifyReport {
        check: Check::NoWorseUnderNoise,
        pass: m.mean >= bound - 3.0 * se,
        statistic: m.mean,
        bound,
        stderr: Some(se),
        replications: coverages.len(),
        detail: format!("mean coverage with uniform level noise of half-width {}", params.noise),
    })
}

fn zero_mean_budget(params: &VerifyParams) -> VerifyReport {
    let n = params.n_cal;
    let c = coefficient_c(params.alpha, n, CoefficientMode::Exact);
    let total: f64 = (0..=n)
        .map(|j| budget_conservative(j as f64 / n as f64, params.alpha, c))
        .sum();
    let mean = total / (n + 1) as f64;
    let bound = 1e-10;
    VerifyReport {
        check: Check::ZeroMeanBudget,
        pass: mean.abs() < bound,
        statistic: mean.abs(),
        bound,
        stderr: None,
        replications: 0,
        detail: format!("|mean adjustment| over the {} rank grid points, C = {c}", n + 1),
    }
}

/// The adversary always predicts rank 0. The conservative budgeter is
/// increasing in the predicted rank, so this is the pointwise
/// coverage-minimizing choice for every realized rank: scores that would be
/// missed stay missed and every other score faces the highest level.
fn worst_case_loss(params: &VerifyParams) -> Result<VerifyReport> {
    let config = MethodConfig {
        alpha: params.alpha,
        ..MethodConfig::new(Method::TqaBudget)
    };
    let budget = BudgetParams::from_config(&config, params.n_cal);
    let adversarial_delta = budget.raw_delta(0.0);
    let coverages = replicate(params, |r| {
        let panel = generate_panel(&params.panel_spec(r))?;
        let intervals = run_with_adjustment(&panel, &config, &|_| adversarial_delta)?;
        Ok(mean_coverage(&intervals))
    })?;
    let m = MeanSd::of(&coverages);
    let se = m.stderr(coverages.len());
    let loss = worst_case_loss_bound(params.alpha, params.n_cal);
    let bound = 1.0 - params.alpha - loss;
    Ok(VerifyReport {
        check: Check::WorstCaseLoss,
        pass: m.mean >= bound - 3.0 * se,
        statistic: m.mean,
        bound,
        stderr: Some(se),
        replications: coverages.len(),
        detail: format!("loss bound {loss:.6}, adversarial adjustment {adversarial_delta:.6}"),
    })
}

fn feedback_level(params: &VerifyParams) -> Result<VerifyReport> {
    let levels = replicate(params, |r| {
        let spec = params.panel_spec(r);
        let panel = generate_panel(&spec)?;
        let config = MethodConfig {
            alpha: params.alpha,
            gamma: params.gamma,
            error_variant: params.error_variant,
            smoothing: true,
            seed: spec.seed,
            ..MethodConfig::new(Method::TqaError)
        };
        let intervals = run_method(&panel, &config)?;
        let total: f64 = (0..intervals.n_series()).map(|i| intervals.levels(i).iter().sum::<f64>()).sum();
        Ok(total / (intervals.n_series() * intervals.horizon()) as f64)
    })?;
    let m = MeanSd::of(&levels);
    let se = m.stderr(levels.len());
    let pass = match params.error_variant {
        ErrorVariant::Asymptotic => m.mean <= params.alpha + 3.0 * se,
        ErrorVariant::Symmetric => (m.mean - params.alpha).abs() <= 3.0 * se,
    };
    Ok(VerifyReport {
        check: Check::FeedbackLevel,
        pass,
        statistic: m.mean,
        bound: params.alpha,
        stderr: Some(se),
        replications: levels.len(),
        detail: format!("time-mean level, {} variant, smoothing on", params.error_variant),
    })
}

/// Error indicators an adversary or a random source would like to emit.
/// Cells whose level is non-positive have unbounded intervals and are
/// always covered, whatever the adversary wants.
pub fn replay_errors(wanted: impl IntoIterator<Item = bool>, alpha: f64, gamma: f64) -> Vec<(f64, bool)> {
    let mut adj = ErrorAdjuster::new(alpha, gamma, ErrorVariant::Asymptotic);
    wanted
        .into_iter()
        .map(|want| {
            let level = adj.level();
            let err = want && level > 0.0;
            adj.observe(err);
            (level, err)
        })
        .collect()
}

/// Number of prefixes whose running error rate exceeds the bound.
pub fn count_violations(steps: &[(f64, bool)], alpha: f64, gamma: f64) -> usize {
    let mut misses = 0usize;
    steps
        .iter()
        .enumerate()
        .filter(|(t, (_, err))| {
            misses += usize::from(*err);
            misses as f64 / (t + 1) as f64 > error_rate_bound(alpha, gamma, t + 1) + 1e-12
        })
        .count()
}

fn error_rate(params: &VerifyParams) -> VerifyReport {
    let (alpha, gamma, t) = (params.alpha, params.gamma, params.steps);
    let mut sequences: Vec<(String, Vec<bool>)> = vec![
        ("always_miss".into(), vec![true; t]),
        ("alternating".into(), (0..t).map(|k| k % 2 == 0).collect()),
        ("bursts".into(), (0..t).map(|k| (k / 50) % 2 == 0).collect()),
    ];
    for r in 0..params.replications {
        let mut rng = indexed_rng(params.seed, "verify/error-sequence", r as u64);
        let p: f64 = rng.random();
        sequences.push((format!("bernoulli_{r}"), (0..t).map(|_| rng.random::<f64>() < p).collect()));
    }
    let results: Vec<(f64, usize)> = sequences
        .par_iter()
        .map(|(_, seq)| {
            let steps = replay_errors(seq.iter().copied(), alpha, gamma);
            let rate = steps.iter().filter(|s| s.1).count() as f64 / t as f64;
            (rate, count_violations(&steps, alpha, gamma))
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let violations: usize = results.iter().map(|r| r.1).sum();
    VerifyReport {
        check: Check::ErrorRateBound,
        pass: violations == 0,
        statistic: worst,
        bound: error_rate_bound(alpha, gamma, t),
        stderr: None,
        replications: sequences.len(),
        detail: format!("{} sequences of {t} steps, {violations} prefix violations", sequences.len()),
    }
}

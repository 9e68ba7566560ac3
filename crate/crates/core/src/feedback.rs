//! Error-driven quantile adjustment.
//!
//! Each test series carries its own adjustment `delta`, starting at 0. After
//! every step the adjustment grows by `gamma * (1 - alpha)` on a miss and
//! shrinks by `gamma * alpha` on a hit, so a series that keeps missing asks
//! for ever higher quantiles. Once the effective level `alpha - delta` drops
//! to zero or below the interval is unbounded and cannot miss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::quantile::{conformal_quantile_sorted, smoothed_threshold_sorted};
use crate::types::ErrorVariant;

/// One update of the adjustment.
///
/// `Asymptotic` adds `gamma * (err - alpha)` while `delta >= alpha - 1`
/// (level at most 1) and otherwise decays `delta` geometrically.
/// `Symmetric` adds only while the level lies in `[0, 1]`.
pub fn tqae_step(delta: f64, err: bool, gamma: f64, alpha: f64, variant: ErrorVariant) -> f64 {
    let err = if err { 1.0 } else { 0.0 };
    let level = alpha - delta;
    let additive = match variant {
        ErrorVariant::Asymptotic => delta >= alpha - 1.0,
        ErrorVariant::Symmetric => (0.0..=1.0).contains(&level),
    };
    if additive {
        delta + gamma * (err - alpha)
    } else {
        (1.0 - gamma) * delta
    }
}

/// Upper bound `alpha + (alpha + gamma) / (gamma * T)` on the error rate of the
/// asymptotic variant over any `T` steps.
pub fn error_rate_bound(alpha: f64, gamma: f64, steps: usize) -> f64 {
    alpha + (alpha + gamma) / (gamma * steps as f64)
}

/// Adjustment state of a single series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorAdjuster {
    pub alpha: f64,
    pub gamma: f64,
    pub variant: ErrorVariant,
    delta: f64,
}

impl ErrorAdjuster {
    pub fn new(alpha: f64, gamma: f64, variant: ErrorVariant) -> Self {
        Self {
            alpha,
            gamma,
            variant,
            delta: 0.0,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn level(&self) -> f64 {
        self.alpha - self.delta
    }

    pub fn observe(&mut self, err: bool) {
        self.delta = tqae_step(self.delta, err, self.gamma, self.alpha, self.variant);
    }
}

/// One step of [`run_tqae`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TqaeStep {
    pub delta: f64,
    pub level: f64,
    /// Score threshold; the interval is `{y : score(y) <= threshold}`.
    pub threshold: f64,
    pub err: bool,
}

impl TqaeStep {
    pub fn is_unbounded(&self) -> bool {
        self.threshold == f64::INFINITY
    }
}

/// Runs the adjuster over one test series given, per step, the calibration
/// cross-section and the realized test score.
///
/// With `smoothing`, the threshold is randomized between the two candidate
/// order statistics using one draw from `rng` per step.
pub fn run_tqae<'a, I, R>(
    stream: I,
    alpha: f64,
    gamma: f64,
    variant: ErrorVariant,
    smoothing: bool,
    rng: &mut R,
) -> Result<Vec<TqaeStep>>
where
    I: IntoIterator<Item = (&'a [f64], f64)>,
    R: Rng + ?Sized,
{
    let mut adj = ErrorAdjuster::new(alpha, gamma, variant);
    let mut out = Vec::new();
    let mut sorted = Vec::new();
    for (cal, score) in stream {
        if cal.is_empty() {
            return Err(Error::EmptySample);
        }
        sorted.clear();
        sorted.extend_from_slice(cal);
        sorted.sort_by(f64::total_cmp);
        let level = adj.level();
        let threshold = if smoothing {
            let u: f64 = rng.random();
            smoothed_threshold_sorted(level, &sorted, u)
        } else {
            conformal_quantile_sorted(level, &sorted)
        };
        let err = !(score <= threshold);
        out.push(TqaeStep {
            delta: adj.delta(),
            level,
            threshold,
            err,
        });
        adj.observe(err);
    }
    Ok(out)
}

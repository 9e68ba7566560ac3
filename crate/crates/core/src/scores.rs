//! Nonconformity scores and their inversion into intervals.

use crate::error::{Error, Result};
use crate::types::{ForecastPanel, ScaleSource, ScoreKind, ScorePanel};

/// Smallest scale produced by the decayed fallback.
pub const SCALE_FLOOR: f64 = 1e-6;

pub fn abs_residual(y: f64, y_hat: f64) -> f64 {
    (y - y_hat).abs()
}

pub fn normalized_residual(y: f64, y_hat: f64, sigma_hat: f64) -> Result<f64> {
    if !(sigma_hat > 0.0) {
        return Err(Error::NonpositiveScale(sigma_hat));
    }
    Ok((y - y_hat).abs() / sigma_hat)
}

/// Conformalized quantile regression score; negative strictly inside `(q_lo, q_hi)`.
pub fn cqr_score(y: f64, q_lo: f64, q_hi: f64) -> Result<f64> {
    if q_lo > q_hi {
        return Err(Error::CrossedQuantiles { lo: q_lo, hi: q_hi });
    }
    Ok((q_lo - y).max(y - q_hi))
}

/// Forecast channels of a single cell, as needed by the score functions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellForecast {
    pub y_hat: f64,
    pub q_lo: Option<f64>,
    pub q_hi: Option<f64>,
    pub sigma_hat: Option<f64>,
}

impl CellForecast {
    pub fn point(y_hat: f64) -> Self {
        Self {
            y_hat,
            ..Self::default()
        }
    }

    fn quantiles(&self) -> Result<(f64, f64)> {
        match (self.q_lo, self.q_hi) {
            (Some(lo), Some(hi)) => Ok((lo, hi)),
            (None, _) => Err(Error::MissingChannel("q_lo")),
            (_, None) => Err(Error::MissingChannel("q_hi")),
        }
    }

    fn sigma(&self) -> Result<f64> {
        self.sigma_hat.ok_or(Error::MissingChannel("sigma_hat"))
    }
}

/// Score of actual `y` under `kind`.
pub fn score(kind: ScoreKind, y: f64, f: &CellForecast) -> Result<f64> {
    match kind {
        ScoreKind::AbsResidual => Ok(abs_residual(y, f.y_hat)),
        ScoreKind::NormalizedResidual => normalized_residual(y, f.y_hat, f.sigma()?),
        ScoreKind::Cqr => {
            let (lo, hi) = f.quantiles()?;
            cqr_score(y, lo, hi)
        }
    }
}

/// Set `{y : score(y) <= threshold}` as a closed interval.
///
/// An infinite threshold gives `(-inf, +inf)`. Thresholds below the smallest
/// attainable score collapse to a point: `[y_hat, y_hat]` for residual
/// scores, the quantile midpoint for CQR.
pub fn interval_from_threshold(kind: ScoreKind, f: &CellForecast, threshold: f64) -> Result<(f64, f64)> {
    if threshold == f64::INFINITY {
        // channels are still required so a misconfigured run fails early
        match kind {
            ScoreKind::AbsResidual => {}
            ScoreKind::NormalizedResidual => {
                f.sigma()?;
            }
            ScoreKind::Cqr => {
                f.quantiles()?;
            }
        }
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    match kind {
        ScoreKind::AbsResidual => {
            let v = threshold.max(0.0);
            Ok((f.y_hat - v, f.y_hat + v))
        }
        ScoreKind::NormalizedResidual => {
            let v = threshold.max(0.0) * f.sigma()?;
            Ok((f.y_hat - v, f.y_hat + v))
        }
        ScoreKind::Cqr => {
            let (lo, hi) = f.quantiles()?;
            if lo > hi {
                return Err(Error::CrossedQuantiles { lo, hi });
            }
            let half = (hi - lo) / 2.0;
            if threshold < -half {
                let mid = lo + half;
                log::debug!("cqr threshold {threshold} below -{half}; collapsing to midpoint {mid}");
                Ok((mid, mid))
            } else {
                Ok((lo - threshold, hi + threshold))
            }
        }
    }
}

/// Exponentially decayed mean of past absolute residuals, used as a scale
/// forecast when none is supplied. Step `t` only sees residuals before `t`;
/// step 0 gets a unit scale.
pub fn decayed_scale(y: &[f64], y_hat: &[f64], beta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (yt, ft) in y.iter().zip(y_hat) {
        out.push(if den > 0.0 { (num / den).max(SCALE_FLOOR) } else { 1.0 });
        num = beta * num + (yt - ft).abs();
        den = beta * den + 1.0;
    }
    out
}

/// Per-cell forecasts of one series, with the scale channel resolved.
#[derive(Debug, Clone)]
pub struct SeriesForecasts {
    pub y_hat: Vec<f64>,
    pub q_lo: Option<Vec<f64>>,
    pub q_hi: Option<Vec<f64>>,
    pub sigma_hat: Option<Vec<f64>>,
}

impl SeriesForecasts {
    pub fn resolve(panel: &ForecastPanel, series: usize, scale: ScaleSource, beta: f64) -> Self {
        let sigma_hat = match scale {
            ScaleSource::External => panel.sigma_hat(series).map(<[f64]>::to_vec),
            ScaleSource::Decayed => Some(decayed_scale(panel.y(series), panel.y_hat(series), beta)),
        };
        Self {
            y_hat: panel.y_hat(series).to_vec(),
            q_lo: panel.q_lo(series).map(<[f64]>::to_vec),
            q_hi: panel.q_hi(series).map(<[f64]>::to_vec),
            sigma_hat,
        }
    }

    pub fn cell(&self, t: usize) -> CellForecast {
        CellForecast {
            y_hat: self.y_hat[t],
            q_lo: self.q_lo.as_ref().map(|v| v[t]),
            q_hi: self.q_hi.as_ref().map(|v| v[t]),
            sigma_hat: self.sigma_hat.as_ref().map(|v| v[t]),
        }
    }
}

/// Checks that the panel carries the channels `kind` needs under `scale`.
pub fn check_channels(panel: &ForecastPanel, kind: ScoreKind, scale: ScaleSource) -> Result<()> {
    match kind {
        ScoreKind::AbsResidual => Ok(()),
        ScoreKind::NormalizedResidual => match scale {
            ScaleSource::External if !panel.has_sigma_hat() => Err(Error::MissingChannel("sigma_hat")),
            _ => Ok(()),
        },
        ScoreKind::Cqr if !panel.has_quantiles() => Err(Error::MissingChannel("q_lo/q_hi")),
        ScoreKind::Cqr => Ok(()),
    }
}

/// Scores for every cell of the panel.
pub fn score_panel(panel: &ForecastPanel, kind: ScoreKind, scale: ScaleSource, beta: f64) -> Result<ScorePanel> {
    check_channels(panel, kind, scale)?;
    let horizon = panel.horizon();
    let mut v = Vec::with_capacity(panel.n_series() * horizon);
    for i in 0..panel.n_series() {
        let f = SeriesForecasts::resolve(panel, i, scale, beta);
        for (t, y) in panel.y(i).iter().enumerate() {
            v.push(score(kind, *y, &f.cell(t))?);
        }
    }
    Ok(ScorePanel::new(kind, horizon, v))
}

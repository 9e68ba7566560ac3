//! Domain types shared by every stage of the engine.
//!
//! Panels are dense `(series × time)` grids stored row-major. Optional
//! channels (quantile and scale forecasts) are present for the whole panel
//! or absent for the whole panel; there are no per-cell nulls.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declares a fieldless enum with stable snake_case names used by the CSV
/// files, the manifests and the command line.
macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($(#[$vmeta:meta])* $variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $($(#[$vmeta])* #[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    other => {
                        let expected: Vec<&str> = $name::ALL.iter().map(|v| v.as_str()).collect();
                        Err(Error::InvalidConfig(format!(
                            "unknown {} '{}', expected one of: {}",
                            stringify!($name),
                            other,
                            expected.join(", ")
                        )))
                    }
                }
            }
        }
    };
}

named_enum! {
    /// Role of a series in the split-conformal protocol.
    Split {
        Train => "train",
        Calibration => "cal" | "calibration",
        Test => "test",
    }
}

named_enum! {
    /// Nonconformity score family.
    ScoreKind {
        /// `|y - y_hat|`
        AbsResidual => "abs_residual" | "abs",
        /// `|y - y_hat| / sigma_hat`
        NormalizedResidual => "normalized_residual" | "normalized",
        /// `max(q_lo - y, y - q_hi)`
        Cqr => "cqr",
    }
}

named_enum! {
    /// How the per-series quantile adjustment is produced.
    Method {
        Split => "split",
        TqaBudget => "tqa_budget",
        TqaError => "tqa_error",
    }
}

named_enum! {
    /// Rank predictor feeding the budget adjuster.
    Predictor {
        /// Rank of the exponentially decayed mean residual.
        Ms => "ms",
        /// Rank of the exponentially weighted average of past ranks.
        Ewa => "ewa",
    }
}

named_enum! {
    Budgeter {
        Conservative => "conservative",
        Aggressive => "aggressive",
    }
}

named_enum! {
    /// Budget coefficient: exact zero-mean value for the calibration size, or the size-free approximation.
    CoefficientMode {
        Exact => "exact",
        Practical => "practical",
    }
}

named_enum! {
    /// Update rule of the error-driven adjuster.
    ErrorVariant {
        /// Additive while `a <= 1`, geometric pull toward zero adjustment otherwise.
        Asymptotic => "asymptotic",
        /// Additive only while `a` lies in `[0, 1]`, geometric pull otherwise.
        Symmetric => "symmetric",
    }
}

named_enum! {
    /// Functional form of the aggressive budgeter.
    AggressiveForm {
        /// `2 * alpha * (r - 0.5)`, keeping the level inside `[0, 2 * alpha]`.
        Multiplicative => "multiplicative",
        /// `(r - 0.5) / (2 * alpha)`, kept for compatibility; it is not bounded to a valid level.
        Divided => "divided",
    }
}

named_enum! {
    /// Source of the scale forecast used by normalized residual scores.
    ScaleSource {
        /// Read `sigma_hat` from the panel.
        External => "external",
        /// Exponentially decayed mean of past absolute residuals of the same series.
        Decayed => "decayed",
    }
}

/// One series as supplied to [`ForecastPanel::from_series`].
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: String,
    pub split: Split,
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub q_lo: Option<Vec<f64>>,
    pub q_hi: Option<Vec<f64>>,
    pub sigma_hat: Option<Vec<f64>>,
}

impl Series {
    pub fn new(id: impl Into<String>, split: Split, y: Vec<f64>, y_hat: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            split,
            y,
            y_hat,
            q_lo: None,
            q_hi: None,
            sigma_hat: None,
        }
    }
}

/// Actuals and forecasts for a cross-section of equal-length series.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPanel {
    ids: Vec<String>,
    split: Vec<Split>,
    horizon: usize,
    y: Vec<f64>,
    y_hat: Vec<f64>,
    q_lo: Option<Vec<f64>>,
    q_hi: Option<Vec<f64>>,
    sigma_hat: Option<Vec<f64>>,
}

impl ForecastPanel {
    /// Assembles a panel, checking equal horizons, whole-channel presence and
    /// strictly positive scales.
    pub fn from_series(series: Vec<Series>) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::InvalidPanel("panel has no series".into()))?;
        let horizon = first.y.len();
        if horizon == 0 {
            return Err(Error::InvalidPanel("horizon must be at least 1".into()));
        }
        let has_q_lo = first.q_lo.is_some();
        let has_q_hi = first.q_hi.is_some();
        let has_sigma = first.sigma_hat.is_some();
        if has_q_lo != has_q_hi {
            return Err(Error::InvalidPanel(
                "q_lo and q_hi must be supplied together".into(),
            ));
        }

        let n = series.len();
        let mut panel = ForecastPanel {
            ids: Vec::with_capacity(n),
            split: Vec::with_capacity(n),
            horizon,
            y: Vec::with_capacity(n * horizon),
            y_hat: Vec::with_capacity(n * horizon),
            q_lo: has_q_lo.then(|| Vec::with_capacity(n * horizon)),
            q_hi: has_q_hi.then(|| Vec::with_capacity(n * horizon)),
            sigma_hat: has_sigma.then(|| Vec::with_capacity(n * horizon)),
        };

        for s in series {
            let check_len = |name: &str, v: &[f64]| -> Result<()> {
                if v.len() != horizon {
                    return Err(Error::InvalidPanel(format!(
                        "series {}: {} has {} steps, expected {}",
                        s.id,
                        name,
                        v.len(),
                        horizon
                    )));
                }
                Ok(())
            };
            check_len("y", &s.y)?;
            check_len("y_hat", &s.y_hat)?;
            if s.y.iter().chain(&s.y_hat).any(|v| !v.is_finite()) {
                return Err(Error::InvalidPanel(format!(
                    "series {}: y and y_hat must be finite",
                    s.id
                )));
            }
            append_channel(&mut panel.q_lo, s.q_lo.as_deref(), "q_lo", &s.id, horizon)?;
            append_channel(&mut panel.q_hi, s.q_hi.as_deref(), "q_hi", &s.id, horizon)?;
            if let Some(sig) = &s.sigma_hat {
                if let Some(bad) = sig.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidPanel(format!(
                        "series {}: sigma_hat must be strictly positive, got {}",
                        s.id, bad
                    )));
                }
            }
            append_channel(
                &mut panel.sigma_hat,
                s.sigma_hat.as_deref(),
                "sigma_hat",
                &s.id,
                horizon,
            )?;
            panel.y.extend_from_slice(&s.y);
            panel.y_hat.extend_from_slice(&s.y_hat);
            panel.ids.push(s.id);
            panel.split.push(s.split);
        }

        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = panel.ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidPanel(format!("duplicate series id {dup}")));
        }
        Ok(panel)
    }

    pub fn n_series(&self) -> usize {
        self.ids.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Index of the series named `id`.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn id(&self, series: usize) -> &str {
        &self.ids[series]
    }

    pub fn split(&self, series: usize) -> Split {
        self.split[series]
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    /// Indices of the series carrying `split`, in panel order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_series())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.split.iter().filter(|s| **s == split).count()
    }

    fn row<'a>(&self, data: &'a [f64], series: usize) -> &'a [f64] {
        &data[series * self.horizon..(series + 1) * self.horizon]
    }

    pub fn y(&self, series: usize) -> &[f64] {
        self.row(&self.y, series)
    }

    pub fn y_hat(&self, series: usize) -> &[f64] {
        self.row(&self.y_hat, series)
    }

    pub fn q_lo(&self, series: usize) -> Option<&[f64]> {
        self.q_lo.as_deref().map(|d| self.row(d, series))
    }

    pub fn q_hi(&self, series: usize) -> Option<&[f64]> {
        self.q_hi.as_deref().map(|d| self.row(d, series))
    }

    pub fn sigma_hat(&self, series: usize) -> Option<&[f64]> {
        self.sigma_hat.as_deref().map(|d| self.row(d, series))
    }

    pub fn has_quantiles(&self) -> bool {
        self.q_lo.is_some()
    }

    pub fn has_sigma_hat(&self) -> bool {
        self.sigma_hat.is_some()
    }

    /// Extracts one series back into its owned form.
    pub fn series(&self, series: usize) -> Series {
        Series {
            id: self.ids[series].clone(),
            split: self.split[series],
            y: self.y(series).to_vec(),
            y_hat: self.y_hat(series).to_vec(),
            q_lo: self.q_lo(series).map(<[f64]>::to_vec),
            q_hi: self.q_hi(series).map(<[f64]>::to_vec),
            sigma_hat: self.sigma_hat(series).map(<[f64]>::to_vec),
        }
    }

    /// Replaces the point forecasts, e.g. with the output of a fitted forecaster.
    pub fn with_y_hat(mut self, y_hat: Vec<f64>) -> Result<Self> {
        if y_hat.len() != self.y.len() {
            return Err(Error::InvalidPanel(format!(
                "forecast grid has {} cells, panel has {}",
                y_hat.len(),
                self.y.len()
            )));
        }
        if y_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel("forecasts must be finite".into()));
        }
        self.y_hat = y_hat;
        Ok(self)
    }

    /// Reassigns split labels (used when re-splitting pooled data between repetitions).
    pub fn with_splits(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.n_series() {
            return Err(Error::InvalidPanel(format!(
                "{} split labels for {} series",
                split.len(),
                self.n_series()
            )));
        }
        self.split = split;
        Ok(self)
    }
}

fn append_channel(
    dest: &mut Option<Vec<f64>>,
    src: Option<&[f64]>,
    name: &str,
    id: &str,
    horizon: usize,
) -> Result<()> {
    match (dest.as_mut(), src) {
        (Some(d), Some(s)) => {
            if s.len() != horizon {
                return Err(Error::InvalidPanel(format!(
                    "series {id}: {name} has {} steps, expected {horizon}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPanel(format!(
                    "series {id}: {name} must be finite"
                )));
            }
            d.extend_from_slice(s);
            Ok(())
        }
        (None, None) => Ok(()),
        _ => Err(Error::InvalidPanel(format!(
            "channel {name} must be present for every series or for none (series {id})"
        ))),
    }
}

/// Nonconformity scores for every `(series, t)` of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePanel {
    pub kind: ScoreKind,
    horizon: usize,
    v: Vec<f64>,
}

impl ScorePanel {
    pub(crate) fn new(kind: ScoreKind, horizon: usize, v: Vec<f64>) -> Self {
        debug_assert!(v.iter().all(|x| x.is_finite()));
        Self { kind, horizon, v }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_series(&self) -> usize {
        self.v.len() / self.horizon
    }

    pub fn get(&self, series: usize, t: usize) -> f64 {
        self.v[series * self.horizon + t]
    }

    pub fn series(&self, series: usize) -> &[f64] {
        &self.v[series * self.horizon..(series + 1) * self.horizon]
    }
}

/// Everything that selects and parameterizes an interval method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    /// Target miscoverage.
    pub alpha: f64,
    pub method: Method,
    pub score: ScoreKind,
    pub scale: ScaleSource,
    pub predictor: Predictor,
    pub budgeter: Budgeter,
    pub aggressive_form: AggressiveForm,
    pub coefficient_mode: CoefficientMode,
    /// Decay of the rank predictors and of the fallback scale.
    pub beta: f64,
    /// Step size of the error-driven adjuster.
    pub gamma: f64,
    /// Smallest effective level the budget adjusters may reach.
    pub level_floor: f64,
    pub error_variant: ErrorVariant,
    /// Randomize between the two candidate order statistics for exact coverage.
    pub smoothing: bool,
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            method: Method::Split,
            score: ScoreKind::AbsResidual,
            scale: ScaleSource::External,
            predictor: Predictor::Ms,
            budgeter: Budgeter::Conservative,
            aggressive_form: AggressiveForm::Multiplicative,
            coefficient_mode: CoefficientMode::Exact,
            beta: 0.8,
            gamma: 0.005,
            level_floor: 0.01,
            error_variant: ErrorVariant::Asymptotic,
            smoothing: false,
            seed: 0,
        }
    }
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad(format!("alpha must lie in (0, 0.5], got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.level_floor > 0.0 && self.level_floor < self.alpha) {
            return bad(format!(
                "level floor must lie in (0, alpha = {}), got {}",
                self.alpha, self.level_floor
            ));
        }
        Ok(())
    }
}

/// Per-series evolving quantile adjustment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjusterState {
    alpha: f64,
    pub delta_hat: f64,
    pub r_hat: Option<f64>,
}

impl AdjusterState {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            delta_hat: 0.0,
            r_hat: None,
        }
    }

    /// Effective miscoverage level `alpha - delta_hat`; may leave `[0, 1]`.
    pub fn level(&self) -> f64 {
        self.alpha - self.delta_hat
    }
}

/// Intervals for every `(test series, t)` of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPanel {
    ids: Vec<String>,
    horizon: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    level: Vec<f64>,
    covered: Vec<bool>,
}

/// One cell of an [`IntervalPanel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalCell {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub covered: bool,
}

impl IntervalCell {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_infinite(&self) -> bool {
        self.lo.is_infinite() || self.hi.is_infinite()
    }

    pub fn err(&self) -> bool {
        !self.covered
    }
}

impl IntervalPanel {
    /// Builds a panel from per-series rows of cells, checking `lo <= hi`.
    pub fn from_rows(ids: Vec<String>, horizon: usize, rows: Vec<Vec<IntervalCell>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::InvalidPanel(format!(
                "{} ids for {} interval rows",
                ids.len(),
                rows.len()
            )));
        }
        let n = ids.len() * horizon;
        let mut out = IntervalPanel {
            ids,
            horizon,
            lo: Vec::with_capacity(n),
            hi: Vec::with_capacity(n),
            level: Vec::with_capacity(n),
            covered: Vec::with_capacity(n),
        };
        for (id, row) in out.ids.iter().zip(&rows) {
            if row.len() != horizon {
                return Err(Error::InvalidPanel(format!(
                    "series {id}: {} interval steps, expected {horizon}",
                    row.len()
                )));
            }
            for (t, c) in row.iter().enumerate() {
                if c.lo.is_nan() || c.hi.is_nan() || c.lo > c.hi {
                    return Err(Error::InvalidPanel(format!(
                        "series {id}, t {t}: interval [{}, {}] is not ordered",
                        c.lo, c.hi
                    )));
                }
                out.lo.push(c.lo);
                out.hi.push(c.hi);
                out.level.push(c.level);
                out.covered.push(c.covered);
            }
        }
        Ok(out)
    }

    pub fn n_series(&self) -> usize {
        self.ids.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn cell(&self, series: usize, t: usize) -> IntervalCell {
        let k = series * self.horizon + t;
        IntervalCell {
            lo: self.lo[k],
            hi: self.hi[k],
            level: self.level[k],
            covered: self.covered[k],
        }
    }

    pub fn row(&self, series: usize) -> impl Iterator<Item = IntervalCell> + '_ {
        (0..self.horizon).map(move |t| self.cell(series, t))
    }

    pub fn covered(&self, series: usize) -> &[bool] {
        &self.covered[series * self.horizon..(series + 1) * self.horizon]
    }

    pub fn levels(&self, series: usize) -> &[f64] {
        &self.level[series * self.horizon..(series + 1) * self.horizon]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

//! Seeded synthetic panels and a per-step linear forecaster.
//!
//! Series are generated as `y[i][t] = mu[t] + s_i * eta[i][t]` with a shared
//! seasonal mean `mu`, iid standard normal `eta`, and a per-series scale
//! `s_i`. With `s_i = 1` the score ranks of a series are iid over time; a
//! log-normal `s_i` makes some series persistently harder than others while
//! keeping the series exchangeable.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::indexed_rng;
use crate::types::{ForecastPanel, Series, Split};

/// How the per-series scale is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Dependence {
    /// Every series has unit scale.
    Independent,
    /// `s_i ~ LogNormal(0, strength)`.
    Persistent { strength: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub horizon: usize,
    pub dependence: Dependence,
    /// Level shift added to the test series only, breaking exchangeability
    /// between calibration and test.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_cal: 200,
            n_test: 500,
            horizon: 30,
            dependence: Dependence::Independent,
            drift: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("n_train", self.n_train), ("n_cal", self.n_cal), ("n_test", self.n_test), ("horizon", self.horizon)] {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if let Dependence::Persistent { strength } = self.dependence {
            if !(strength > 0.0 && strength.is_finite()) {
                return Err(Error::InvalidConfig(format!("strength must be positive, got {strength}")));
            }
        }
        if !self.drift.is_finite() {
            return Err(Error::InvalidConfig("drift must be finite".into()));
        }
        Ok(())
    }

    pub fn n_series(&self) -> usize {
        self.n_train + self.n_cal + self.n_test
    }
}

/// Shared mean curve: a slow seasonal cycle around 10.
pub fn seasonal_mean(t: usize) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * t as f64 / 12.0;
    10.0 + 2.0 * phase.sin() + 0.5 * (2.0 * phase).cos()
}

/// Generates a panel whose forecasts are the true mean `mu[t]`.
///
/// Series are ordered train, calibration, test and named `s00000`, `s00001`, ...
/// Each series draws from its own stream derived from `(seed, index)`.
pub fn generate_panel(spec: &SynthSpec) -> Result<ForecastPanel> {
    spec.validate()?;
    let mu: Vec<f64> = (0..spec.horizon).map(seasonal_mean).collect();
    let width = spec.n_series().to_string().len().max(5);
    let series: Vec<Series> = (0..spec.n_series())
        .into_par_iter()
        .map(|i| {
            let split = if i < spec.n_train {
                Split::Train
            } else if i < spec.n_train + spec.n_cal {
                Split::Calibration
            } else {
                Split::Test
            };
            let mut rng = indexed_rng(spec.seed, "synth/series", i as u64);
            let scale = match spec.dependence {
                Dependence::Independent => 1.0,
                Dependence::Persistent { strength } => LogNormal::new(0.0, strength)
                    .expect("strength validated")
                    .sample(&mut rng),
            };
            let shift = if split == Split::Test { spec.drift } else { 0.0 };
            let y = mu
                .iter()
                .map(|m| {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    m + shift + scale * eta
                })
                .collect();
            Series::new(format!("s{i:0width$}"), split, y, mu.clone())
        })
        .collect();
    ForecastPanel::from_series(series)
}

/// Uniform draws in `[0, 1)` from the stream for `(seed, label, index)`.
pub fn uniform_stream(seed: u64, label: &str, index: u64, n: usize) -> Vec<f64> {
    let mut rng = indexed_rng(seed, label, index);
    (0..n).map(|_| rng.random()).collect()
}

/// Replaces `y_hat` with per-step least-squares forecasts fitted on the
/// training split.
///
/// For `t >= p` one regression of `y[t]` on an intercept and `y[t-1..=t-p]`
/// is fitted across training series and applied to every series. Earlier
/// steps, and steps whose design is rank deficient, use the training mean
/// at `t`.
pub fn fit_linear_forecaster(panel: &ForecastPanel, p: usize) -> Result<ForecastPanel> {
    let train = panel.indices(Split::Train);
    if train.len() <= p + 1 {
        return Err(Error::TooFewSeries(format!(
            "order {p} needs more than {} training series, got {}",
            p + 1,
            train.len()
        )));
    }
    let horizon = panel.horizon();
    let n = panel.n_series();
    let mut y_hat = vec![0.0; n * horizon];
    for t in 0..horizon {
        let mean = train.iter().map(|&i| panel.y(i)[t]).sum::<f64>() / train.len() as f64;
        let coef = if t >= p { fit_step(panel, &train, t, p) } else { None };
        if t >= p && coef.is_none() {
            log::warn!("step {t}: singular lag design, using the training mean");
        }
        for i in 0..n {
            y_hat[i * horizon + t] = match &coef {
                Some(b) => {
                    let y = panel.y(i);
                    b[0] + (1..=p).map(|k| b[k] * y[t - k]).sum::<f64>()
                }
                None => mean,
            };
        }
    }
    panel.clone().with_y_hat(y_hat)
}

fn fit_step(panel: &ForecastPanel, train: &[usize], t: usize, p: usize) -> Option<DVector<f64>> {
    let x = DMatrix::from_fn(train.len(), p + 1, |r, c| if c == 0 { 1.0 } else { panel.y(train[r])[t - c] });
    let b = DVector::from_iterator(train.len(), train.iter().map(|&i| panel.y(i)[t]));
    let svd = x.svd(true, true);
    let max = svd.singular_values.max();
    if !(max > 0.0) || svd.singular_values.min() <= max * 1e-10 {
        return None;
    }
    svd.solve(&b, 0.0).ok()
}

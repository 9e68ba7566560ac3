//! Python bindings for the conformal interval engine.
//!
//! Enum-valued settings are passed as their snake_case names
//! (`"tqa_budget"`, `"ewa"`, ...). Structured results are returned as plain
//! dictionaries.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use tqa_core::eval::verify::{Check, VerifyParams};
use tqa_core::eval::{EvalOptions, TailWindow};
use tqa_core::synth::{Dependence, SynthSpec};
use tqa_core::{ForecastPanel, IntervalPanel, MethodConfig, Series, Split, Window};

fn err(e: tqa_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyOSError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = tqa_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A panel of series with point forecasts and optional quantile/scale channels.
#[pyclass(name = "Panel", module = "tqa", frozen)]
pub struct PyPanel {
    inner: ForecastPanel,
}

#[pymethods]
impl PyPanel {
    /// Builds a panel from per-series lists; every series must have the same length.
    #[new]
    #[pyo3(signature = (ids, splits, y, y_hat, q_lo=None, q_hi=None, sigma_hat=None))]
    fn new(
        ids: Vec<String>,
        splits: Vec<String>,
        y: Vec<Vec<f64>>,
        y_hat: Vec<Vec<f64>>,
        q_lo: Option<Vec<Vec<f64>>>,
        q_hi: Option<Vec<Vec<f64>>>,
        sigma_hat: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let n = ids.len();
        let lengths = [
            Some(splits.len()),
            Some(y.len()),
            Some(y_hat.len()),
            q_lo.as_ref().map(Vec::len),
            q_hi.as_ref().map(Vec::len),
            sigma_hat.as_ref().map(Vec::len),
        ];
        if lengths.iter().flatten().any(|&len| len != n) {
            return Err(PyValueError::new_err("every argument needs one entry per id"));
        }
        let mut q_lo = q_lo.map(|v| v.into_iter());
        let mut q_hi = q_hi.map(|v| v.into_iter());
        let mut sigma_hat = sigma_hat.map(|v| v.into_iter());
        let mut series = Vec::with_capacity(n);
        for (((id, split), y), y_hat) in ids.into_iter().zip(&splits).zip(y).zip(y_hat) {
            let mut s = Series::new(id, parse::<Split>(split)?, y, y_hat);
            s.q_lo = q_lo.as_mut().and_then(Iterator::next);
            s.q_hi = q_hi.as_mut().and_then(Iterator::next);
            s.sigma_hat = sigma_hat.as_mut().and_then(Iterator::next);
            series.push(s);
        }
        Ok(Self {
            inner: ForecastPanel::from_series(series).map_err(err)?,
        })
    }

    /// Generates a seeded synthetic panel whose forecasts are the true mean.
    #[staticmethod]
    #[pyo3(signature = (n_train=100, n_cal=200, n_test=500, horizon=30, mode="independent", strength=1.0, drift=0.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n_train: usize,
        n_cal: usize,
        n_test: usize,
        horizon: usize,
        mode: &str,
        strength: f64,
        drift: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let dependence = match mode {
            "independent" => Dependence::Independent,
            "persistent" => Dependence::Persistent { strength },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown mode '{other}', expected independent or persistent"
                )))
            }
        };
        let spec = SynthSpec {
            n_train,
            n_cal,
            n_test,
            horizon,
            dependence,
            drift,
            seed,
        };
        Ok(Self {
            inner: tqa_core::synth::generate_panel(&spec).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: tqa_core::io::read_panel_file(&path).map_err(err)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        tqa_core::io::write_panel_file(&path, &self.inner).map_err(err)
    }

    /// Replaces the forecasts with per-step linear regressions on `order` lags.
    fn fit_linear(&self, order: usize) -> PyResult<Self> {
        Ok(Self {
            inner: tqa_core::synth::fit_linear_forecaster(&self.inner, order).map_err(err)?,
        })
    }

    #[getter]
    fn n_series(&self) -> usize {
        self.inner.n_series()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    #[getter]
    fn splits(&self) -> Vec<&'static str> {
        self.inner.splits().iter().map(|s| s.as_str()).collect()
    }

    fn y(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_series()).map(|i| self.inner.y(i).to_vec()).collect()
    }

    fn y_hat(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_series()).map(|i| self.inner.y_hat(i).to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n_series()
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(train={}, cal={}, test={}, horizon={})",
            self.inner.count(Split::Train),
            self.inner.count(Split::Calibration),
            self.inner.count(Split::Test),
            self.inner.horizon()
        )
    }
}

/// Method selection and parameters.
#[pyclass(name = "Config", module = "tqa", frozen)]
pub struct PyConfig {
    inner: MethodConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (
        method="split", alpha=0.1, score="abs_residual", scale="external", predictor="ms",
        budgeter="conservative", aggressive_form="multiplicative", coefficient="exact",
        beta=0.8, gamma=0.005, level_floor=0.01, error_variant="asymptotic",
        smoothing=false, seed=0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        method: &str,
        alpha: f64,
        score: &str,
        scale: &str,
        predictor: &str,
        budgeter: &str,
        aggressive_form: &str,
        coefficient: &str,
        beta: f64,
        gamma: f64,
        level_floor: f64,
        error_variant: &str,
        smoothing: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = MethodConfig {
            alpha,
            method: parse(method)?,
            score: parse(score)?,
            scale: parse(scale)?,
            predictor: parse(predictor)?,
            budgeter: parse(budgeter)?,
            aggressive_form: parse(aggressive_form)?,
            coefficient_mode: parse(coefficient)?,
            beta,
            gamma,
            level_floor,
            error_variant: parse(error_variant)?,
            smoothing,
            seed,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Config(method='{}', alpha={})", self.inner.method, self.inner.alpha)
    }
}

/// Per-step intervals for every test series.
#[pyclass(name = "Intervals", module = "tqa", frozen)]
pub struct PyIntervals {
    inner: IntervalPanel,
}

impl PyIntervals {
    fn grid<T>(&self, f: impl Fn(tqa_core::IntervalCell) -> T) -> Vec<Vec<T>> {
        (0..self.inner.n_series()).map(|i| self.inner.row(i).map(&f).collect()).collect()
    }
}

#[pymethods]
impl PyIntervals {
    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: tqa_core::io::read_intervals_file(&path).map_err(err)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        tqa_core::io::write_intervals_file(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn lo(&self) -> Vec<Vec<f64>> {
        self.grid(|c| c.lo)
    }

    fn hi(&self) -> Vec<Vec<f64>> {
        self.grid(|c| c.hi)
    }

    fn levels(&self) -> Vec<Vec<f64>> {
        self.grid(|c| c.level)
    }

    fn covered(&self) -> Vec<Vec<bool>> {
        self.grid(|c| c.covered)
    }

    /// Coverage, tail coverage, inverse efficiency and width summary.
    #[pyo3(signature = (window="last20", tail_fraction=0.1, tail_window="active"))]
    fn evaluate(&self, py: Python<'_>, window: &str, tail_fraction: f64, tail_window: &str) -> PyResult<Py<PyAny>> {
        let tail_window = match tail_window {
            "active" => TailWindow::Active,
            "full" => TailWindow::Full,
            other => return Err(PyValueError::new_err(format!("unknown tail window '{other}'"))),
        };
        let opts = EvalOptions {
            window: parse::<Window>(window)?,
            tail_fraction,
            tail_window,
        };
        let report = tqa_core::eval::evaluate(&self.inner, &opts).map_err(err)?;
        to_py(py, &report)
    }

    fn __len__(&self) -> usize {
        self.inner.n_series()
    }

    fn __repr__(&self) -> String {
        format!("Intervals(series={}, horizon={})", self.inner.n_series(), self.inner.horizon())
    }
}

/// Runs a method over every test series of `panel`.
#[pyfunction]
#[pyo3(signature = (panel, config=None))]
fn predict(py: Python<'_>, panel: &PyPanel, config: Option<&PyConfig>) -> PyResult<PyIntervals> {
    let config = config.map(|c| c.inner.clone()).unwrap_or_default();
    let inner = py
        .detach(|| tqa_core::run_method(&panel.inner, &config))
        .map_err(err)?;
    Ok(PyIntervals { inner })
}

/// The `ceil((1 - a)(N + 1))`-th smallest of `cal` with `+inf` appended.
#[pyfunction]
fn conformal_quantile(a: f64, cal: Vec<f64>) -> PyResult<f64> {
    tqa_core::quantile::conformal_quantile(a, &cal).map_err(err)
}

/// Runs a built-in guarantee check and returns its report.
#[pyfunction]
#[pyo3(signature = (
    check, alpha=0.1, n_cal=200, n_test=500, horizon=30, replications=50,
    gamma=0.005, steps=10_000, noise=0.05, error_variant="asymptotic", seed=0
))]
#[allow(clippy::too_many_arguments)]
fn verify(
    py: Python<'_>,
    check: &str,
    alpha: f64,
    n_cal: usize,
    n_test: usize,
    horizon: usize,
    replications: usize,
    gamma: f64,
    steps: usize,
    noise: f64,
    error_variant: &str,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let check: Check = check.parse().map_err(err)?;
    let params = VerifyParams {
        alpha,
        n_cal,
        n_test,
        horizon,
        replications,
        gamma,
        steps,
        noise,
        error_variant: parse(error_variant)?,
        seed,
    };
    let report = py
        .detach(|| tqa_core::eval::verify::verify(check, &params))
        .map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
pub fn tqa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyIntervals>()?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

//! Conformal prediction intervals for cross-sectional time-series panels.
//!
//! Given point (and optionally quantile or scale) forecasts for a panel of
//! series split into training, calibration and test sets, the engine builds
//! per-step split-conformal intervals for every test series. The queried
//! quantile can be adjusted per series and per step, either by budgeting on
//! a predicted rank ([`budget`]) or by feeding back past misses
//! ([`feedback`]), which lifts coverage of the worst-covered series while
//! keeping cross-sectional coverage at `1 - alpha`.
//!
//! ```
//! use tqa_core::{pipeline, synth, Method, MethodConfig};
//!
//! let panel = synth::generate_panel(&synth::SynthSpec {
//!     n_cal: 100,
//!     n_test: 50,
//!     horizon: 10,
//!     ..synth::SynthSpec::default()
//! })
//! .unwrap();
//! let intervals = pipeline::run_method(&panel, &MethodConfig::new(Method::TqaBudget)).unwrap();
//! assert_eq!(intervals.n_series(), 50);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod io;
pub mod pipeline;
pub mod quantile;
pub mod scores;
mod seed;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use pipeline::{run_method, Window};
pub use types::{
    AdjusterState, AggressiveForm, Budgeter, CoefficientMode, ErrorVariant, ForecastPanel, IntervalCell,
    IntervalPanel, Method, MethodConfig, Predictor, ScaleSource, ScoreKind, ScorePanel, Series, Split,
};

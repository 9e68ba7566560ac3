//! Repeated runs of several methods over freshly seeded panels, summarized
//! as mean and standard deviation per metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalOptions, MetricsReport};
use crate::error::Result;
use crate::pipeline::run_method;
use crate::types::{ForecastPanel, MethodConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (zero for a single run).
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }

    /// Standard error of the mean.
    pub fn stderr(&self, n: usize) -> f64 {
        self.sd / (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub coverage: MeanSd,
    pub tail_coverage: MeanSd,
    pub inverse_efficiency: MeanSd,
    pub median_width: MeanSd,
    pub mean_width: MeanSd,
    pub pct_infinite: MeanSd,
}

impl MethodSummary {
    pub fn from_reports(method: impl Into<String>, reports: &[MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| MeanSd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            method: method.into(),
            runs: reports.len(),
            coverage: col(|r| r.coverage),
            tail_coverage: col(|r| r.tail_coverage),
            inverse_efficiency: col(|r| r.inverse_efficiency),
            median_width: col(|r| r.width.median),
            mean_width: col(|r| r.width.mean),
            pct_infinite: col(|r| r.width.pct_infinite),
        }
    }
}

/// Per-method reports of every repetition, in repetition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub summaries: Vec<MethodSummary>,
    pub runs: Vec<Vec<MetricsReport>>,
}

/// Runs every `(label, config)` on `repeats` panels built by `make_panel(seed)`.
///
/// Repetition `r` uses seed `base_seed + r` for both the panel and the
/// method's own randomness, so all methods in one repetition see the same panel.
pub fn run_repeated<F>(
    make_panel: F,
    methods: &[(String, MethodConfig)],
    repeats: usize,
    base_seed: u64,
    opts: &EvalOptions,
) -> Result<Experiment>
where
    F: Fn(u64) -> Result<ForecastPanel> + Sync,
{
    let per_rep: Vec<Vec<MetricsReport>> = (0..repeats as u64)
        .into_par_iter()
        .map(|r| {
            let seed = base_seed.wrapping_add(r);
            let panel = make_panel(seed)?;
            methods
                .iter()
                .map(|(label, config)| {
                    let config = MethodConfig { seed, ..config.clone() };
                    Ok(evaluate(&run_method(&panel, &config)?, opts)?.with_method(label.clone()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let runs: Vec<Vec<MetricsReport>> = (0..methods.len())
        .map(|m| per_rep.iter().map(|rep| rep[m].clone()).collect())
        .collect();
    let summaries = methods
        .iter()
        .zip(&runs)
        .map(|((label, _), reports)| MethodSummary::from_reports(label.clone(), reports))
        .collect();
    Ok(Experiment { summaries, runs })
}

/// Aligned `mean ± sd` table of an experiment.
pub fn format_summary(summaries: &[MethodSummary]) -> String {
    let header = ["method", "runs", "coverage", "tail_coverage", "inv_efficiency", "median_width", "pct_infinite"];
    let pm = |m: &MeanSd| format!("{:.4} ± {:.4}", m.mean, m.sd);
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.method.clone(),
                s.runs.to_string(),
                pm(&s.coverage),
                pm(&s.tail_coverage),
                pm(&s.inverse_efficiency),
                pm(&s.median_width),
                format!("{:.2} ± {:.2}", s.pct_infinite.mean, s.pct_infinite.sd),
            ]
        })
        .collect();
    super::render_table(&header, &rows)
}

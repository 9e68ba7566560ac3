//! Coverage, tail coverage, efficiency and width metrics over an evaluation
//! window, plus repeated-run experiments and Monte-Carlo property checks.

pub mod experiment;
pub mod verify;

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{evaluation_window, Window};
use crate::types::IntervalPanel;

fn check_window(intervals: &IntervalPanel, window: &Range<usize>) -> Result<()> {
    if window.is_empty() || window.end > intervals.horizon() {
        return Err(Error::InvalidConfig(format!(
            "window {}..{} is empty or exceeds horizon {}",
            window.start,
            window.end,
            intervals.horizon()
        )));
    }
    if intervals.n_series() == 0 {
        return Err(Error::TooFewSeries("no test series".into()));
    }
    Ok(())
}

/// Coverage of each series over `window`.
pub fn per_series_coverage(intervals: &IntervalPanel, window: Range<usize>) -> Result<Vec<f64>> {
    check_window(intervals, &window)?;
    let len = window.len() as f64;
    Ok((0..intervals.n_series())
        .map(|i| intervals.covered(i)[window.clone()].iter().filter(|c| **c).count() as f64 / len)
        .collect())
}

/// Fraction of covered cells over all test series and the steps in `window`.
pub fn coverage_rate(intervals: &IntervalPanel, window: Range<usize>) -> Result<f64> {
    let per = per_series_coverage(intervals, window)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean of the lowest `ceil(fraction * n)` values.
pub fn lower_tail_mean(values: &[f64], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("tail fraction must lie in (0, 1], got {fraction}")));
    }
    let k = crate::quantile::order_index(fraction, values.len());
    if k < 1 || values.is_empty() {
        return Err(Error::TooFewSeries(format!(
            "a tail of {fraction} over {} series is empty",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (k as usize).min(sorted.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Mean coverage of the least-covered `fraction` of series, with per-series
/// coverage taken over `window`.
pub fn tail_coverage_rate(intervals: &IntervalPanel, window: Range<usize>, fraction: f64) -> Result<f64> {
    if (intervals.n_series() as f64) * fraction < 1.0 - 1e-12 {
        return Err(Error::TooFewSeries(format!(
            "tail fraction {fraction} of {} series is less than one series",
            intervals.n_series()
        )));
    }
    lower_tail_mean(&per_series_coverage(intervals, window)?, fraction)
}

/// Interval widths over `window`, with unbounded widths replaced by twice the
/// widest finite one.
pub fn substituted_widths(intervals: &IntervalPanel, window: Range<usize>) -> Result<Vec<f64>> {
    check_window(intervals, &window)?;
    let mut widths = Vec::with_capacity(intervals.n_series() * window.len());
    for i in 0..intervals.n_series() {
        for t in window.clone() {
            widths.push(intervals.cell(i, t).width());
        }
    }
    let max_finite = widths.iter().copied().filter(|w| w.is_finite()).fold(None, |m: Option<f64>, w| {
        Some(m.map_or(w, |m| m.max(w)))
    });
    if widths.iter().any(|w| !w.is_finite()) {
        let cap = 2.0 * max_finite.ok_or(Error::NoFiniteWidth)?;
        for w in &mut widths {
            if !w.is_finite() {
                *w = cap;
            }
        }
    }
    Ok(widths)
}

/// Mean substituted width divided by the coverage rate.
pub fn inverse_efficiency(intervals: &IntervalPanel, window: Range<usize>) -> Result<f64> {
    let coverage = coverage_rate(intervals, window.clone())?;
    if coverage == 0.0 {
        return Err(Error::ZeroCoverage);
    }
    let widths = substituted_widths(intervals, window)?;
    Ok(mean(&widths) / coverage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub median: f64,
    pub mean: f64,
    /// Percentage (0-100) of unbounded intervals.
    pub pct_infinite: f64,
}

pub fn width_summary(intervals: &IntervalPanel, window: Range<usize>) -> Result<WidthSummary> {
    check_window(intervals, &window)?;
    let mut infinite = 0usize;
    let mut total = 0usize;
    for i in 0..intervals.n_series() {
        for t in window.clone() {
            total += 1;
            infinite += usize::from(intervals.cell(i, t).is_infinite());
        }
    }
    let mut widths = substituted_widths(intervals, window)?;
    widths.sort_by(f64::total_cmp);
    Ok(WidthSummary {
        median: median_sorted(&widths),
        mean: mean(&widths),
        pct_infinite: 100.0 * infinite as f64 / total as f64,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Steps over which the tail metric computes per-series coverage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailWindow {
    /// Same window as the headline coverage.
    #[default]
    Active,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub window: Window,
    pub tail_fraction: f64,
    pub tail_window: TailWindow,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            window: Window::LastK(20),
            tail_fraction: 0.1,
            tail_window: TailWindow::Active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub window: String,
    pub n_series: usize,
    pub coverage: f64,
    pub tail_coverage: f64,
    pub tail_fraction: f64,
    pub inverse_efficiency: f64,
    pub width: WidthSummary,
}

/// All metrics of one interval panel.
pub fn evaluate(intervals: &IntervalPanel, opts: &EvalOptions) -> Result<MetricsReport> {
    let window = evaluation_window(intervals.horizon(), opts.window)?;
    let tail_window = match opts.tail_window {
        TailWindow::Active => window.clone(),
        TailWindow::Full => 0..intervals.horizon(),
    };
    Ok(MetricsReport {
        method: None,
        window: opts.window.to_string(),
        n_series: intervals.n_series(),
        coverage: coverage_rate(intervals, window.clone())?,
        tail_coverage: tail_coverage_rate(intervals, tail_window, opts.tail_fraction)?,
        tail_fraction: opts.tail_fraction,
        inverse_efficiency: inverse_efficiency(intervals, window.clone())?,
        width: width_summary(intervals, window)?,
    })
}

impl MetricsReport {
    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = Some(method.into());
        self
    }
}

/// Aligned text table, one row per report.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let header = ["method", "coverage", "tail_coverage", "inv_efficiency", "median_width", "mean_width", "pct_infinite"];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.method.clone().unwrap_or_else(|| "-".into()),
                format!("{:.4}", r.coverage),
                format!("{:.4}", r.tail_coverage),
                format!("{:.4}", r.inverse_efficiency),
                format!("{:.4}", r.width.median),
                format!("{:.4}", r.width.mean),
                format!("{:.2}", r.width.pct_infinite),
            ]
        })
        .collect();
    render_table(&header, &rows)
}

pub(crate) fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header.to_vec());
    for row in rows {
        line(&mut out, row.iter().map(String::as_str).collect());
    }
    out
}

/// Lower-tail coverage at each percentile `1..=100`: the mean coverage of
/// the least-covered `p%` of series.
pub fn tail_coverage_curve(intervals: &IntervalPanel, window: Range<usize>) -> Result<Vec<(u32, f64)>> {
    let per = per_series_coverage(intervals, window)?;
    (1..=100u32)
        .map(|p| Ok((p, lower_tail_mean(&per, p as f64 / 100.0)?)))
        .collect()
}

/// Cross-sectional coverage at every step.
pub fn coverage_by_step(intervals: &IntervalPanel) -> Vec<f64> {
    let n = intervals.n_series() as f64;
    (0..intervals.horizon())
        .map(|t| (0..intervals.n_series()).filter(|&i| intervals.covered(i)[t]).count() as f64 / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::IntervalCell;

    fn cell(lo: f64, hi: f64, covered: bool) -> IntervalCell {
        IntervalCell {
            lo,
            hi,
            level: 0.1,
            covered,
        }
    }

    fn panel(rows: Vec<Vec<IntervalCell>>) -> IntervalPanel {
        let horizon = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        IntervalPanel::from_rows(ids, horizon, rows).unwrap()
    }

    fn flags(rows: &[Vec<bool>]) -> IntervalPanel {
        panel(rows.iter().map(|r| r.iter().map(|c| cell(0.0, 1.0, *c)).collect()).collect())
    }

    #[test]
    fn coverage_examples() {
        let p = flags(&[vec![true, true, false, true]]);
        assert_eq!(coverage_rate(&p, 0..4).unwrap(), 0.75);
        assert_eq!(coverage_rate(&flags(&vec![vec![true; 3]; 2]), 0..3).unwrap(), 1.0);
        assert_eq!(coverage_rate(&p, 2..4).unwrap(), 0.5);
        assert!(coverage_rate(&p, 2..2).is_err());
        assert!(coverage_rate(&p, 0..5).is_err());
    }

    #[test]
    fn tail_examples() {
        // per-series coverages 0.5, 0.6 and eighteen 1.0 over ten steps
        let mut rows = vec![
            (0..10).map(|t| t < 5).collect::<Vec<_>>(),
            (0..10).map(|t| t < 6).collect(),
        ];
        rows.extend(std::iter::repeat_n(vec![true; 10], 18));
        let p = flags(&rows);
        assert!((tail_coverage_rate(&p, 0..10, 0.1).unwrap() - 0.55).abs() < 1e-15);
        assert_eq!(tail_coverage_rate(&flags(&vec![vec![true; 4]; 10]), 0..4, 0.1).unwrap(), 1.0);
        let per = per_series_coverage(&p, 0..10).unwrap();
        let full = tail_coverage_rate(&p, 0..10, 1.0).unwrap();
        assert!((full - per.iter().sum::<f64>() / per.len() as f64).abs() < 1e-15);
        assert!(matches!(
            tail_coverage_rate(&flags(&vec![vec![true; 4]; 5]), 0..4, 0.1),
            Err(Error::TooFewSeries(_))
        ));
    }

    #[test]
    fn inverse_efficiency_examples() {
        let p = panel(vec![
            vec![cell(0.0, 2.0, true), cell(0.0, 2.0, true), cell(0.0, 2.0, true), cell(0.0, 2.0, true), cell(0.0, 2.0, false)],
        ]);
        assert!((inverse_efficiency(&p, 0..5).unwrap() - 2.5).abs() < 1e-15);

        let p = panel(vec![vec![
            cell(0.0, 1.0, true),
            cell(-1.0, 2.0, false),
            cell(f64::NEG_INFINITY, f64::INFINITY, true),
        ]]);
        let want = (1.0 + 3.0 + 6.0) / 3.0 / (2.0 / 3.0);
        assert!((inverse_efficiency(&p, 0..3).unwrap() - want).abs() < 1e-12);

        let p = panel(vec![vec![cell(1.0, 1.0, true); 3]; 2]);
        assert_eq!(inverse_efficiency(&p, 0..3).unwrap(), 0.0);

        let p = panel(vec![vec![cell(0.0, 1.0, false); 3]]);
        assert!(matches!(inverse_efficiency(&p, 0..3), Err(Error::ZeroCoverage)));
    }

    #[test]
    fn width_examples() {
        let p = panel(vec![vec![cell(0.0, 1.0, true), cell(0.0, 2.0, true), cell(0.0, 3.0, true)]]);
        let w = width_summary(&p, 0..3).unwrap();
        assert_eq!(w.median, 2.0);
        assert_eq!(w.mean, 2.0);
        assert_eq!(w.pct_infinite, 0.0);

        let p = panel(vec![vec![cell(0.0, 1.0, true), cell(f64::NEG_INFINITY, f64::INFINITY, true)]]);
        let w = width_summary(&p, 0..2).unwrap();
        assert_eq!(w.pct_infinite, 50.0);
        assert_eq!(w.median, 1.5);

        let p = panel(vec![vec![cell(f64::NEG_INFINITY, f64::INFINITY, true)]]);
        assert!(matches!(width_summary(&p, 0..1), Err(Error::NoFiniteWidth)));
    }

    #[test]
    fn evaluate_uses_the_window() {
        let rows: Vec<Vec<bool>> = (0..10).map(|_| (0..30).map(|t| t >= 10).collect()).collect();
        let p = flags(&rows);
        let r = evaluate(&p, &EvalOptions::default()).unwrap();
        assert_eq!(r.coverage, 1.0);
        assert_eq!(r.window, "last20");
        let full = evaluate(&p, &EvalOptions { window: Window::Full, ..EvalOptions::default() }).unwrap();
        assert!((full.coverage - 2.0 / 3.0).abs() < 1e-15);
        let err = evaluate(&p, &EvalOptions { window: Window::LastK(40), ..EvalOptions::default() });
        assert!(matches!(err, Err(Error::WindowTooLong { .. })));
        let tail_full = evaluate(
            &p,
            &EvalOptions {
                tail_window: TailWindow::Full,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert!((tail_full.tail_coverage - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn curves() {
        let rows: Vec<Vec<bool>> = (0..4).map(|i| (0..4).map(|t| t < i + 1).collect()).collect();
        let p = flags(&rows);
        let curve = tail_coverage_curve(&p, 0..4).unwrap();
        assert_eq!(curve.len(), 100);
        assert_eq!(curve[24], (25, 0.25));
        assert_eq!(curve[99].1, (0.25 + 0.5 + 0.75 + 1.0) / 4.0);
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(coverage_by_step(&p), vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn table_is_aligned() {
        let r = MetricsReport {
            method: Some("split".into()),
            window: "last20".into(),
            n_series: 1,
            coverage: 0.9,
            tail_coverage: 0.5,
            tail_fraction: 0.1,
            inverse_efficiency: 3.0,
            width: WidthSummary {
                median: 2.0,
                mean: 2.5,
                pct_infinite: 0.0,
            },
        };
        let text = format_table(&[r.clone(), r.with_method("tqa_budget")]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("method"));
        assert_eq!(lines[1].len(), lines[2].len());
    }
}

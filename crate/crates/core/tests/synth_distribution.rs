use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use tqa_core::synth::{fit_linear_forecaster, generate_panel, seasonal_mean, Dependence, SynthSpec};
use tqa_core::{ForecastPanel, Split};

const DRAWS: u64 = 10_000;

/// Asymptotic Kolmogorov survival function.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let sum: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_uniform_pvalue(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

fn ks_two_sample_pvalue(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    kolmogorov_sf((en + 0.12 + 0.11 / en) * d)
}

fn abs_residual(panel: &ForecastPanel, i: usize, t: usize) -> f64 {
    (panel.y(i)[t] - panel.y_hat(i)[t]).abs()
}

/// Rank of the single test series' score among 99 calibration scores, for
/// one fresh panel per draw.
fn held_out_ranks(dependence: Dependence) -> Vec<usize> {
    (0..DRAWS)
        .map(|seed| {
            let panel = generate_panel(&SynthSpec {
                n_train: 1,
                n_cal: 99,
                n_test: 1,
                horizon: 1,
                dependence,
                drift: 0.0,
                seed,
            })
            .unwrap();
            let test = abs_residual(&panel, panel.indices(Split::Test)[0], 0);
            panel
                .indices(Split::Calibration)
                .iter()
                .filter(|&&i| abs_residual(&panel, i, 0) < test)
                .count()
        })
        .collect()
}

#[test]
fn held_out_rank_is_uniform_in_both_modes() {
    for dependence in [Dependence::Independent, Dependence::Persistent { strength: 1.0 }] {
        let ranks = held_out_ranks(dependence);

        let mut jitter = ChaCha8Rng::seed_from_u64(17);
        let u: Vec<f64> = ranks.iter().map(|&r| (r as f64 + jitter.random::<f64>()) / 100.0).collect();
        let p_ks = ks_uniform_pvalue(u);

        let mut counts = [0usize; 100];
        for r in &ranks {
            counts[*r] += 1;
        }
        let expected = DRAWS as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p_chi2 = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);

        assert!(p_ks > 1e-3, "{dependence:?}: KS p = {p_ks}");
        assert!(p_chi2 > 1e-3, "{dependence:?}: chi-square p = {p_chi2}");
    }
}

#[test]
fn series_positions_are_exchangeable() {
    let spec = |seed| SynthSpec {
        n_train: 1,
        n_cal: 1,
        n_test: 1,
        horizon: 5,
        dependence: Dependence::Persistent { strength: 1.0 },
        drift: 0.0,
        seed,
    };
    let stat = |panel: &ForecastPanel, i: usize| (0..5).map(|t| abs_residual(panel, i, t)).sum::<f64>();
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for seed in 0..4_000 {
        let panel = generate_panel(&spec(seed)).unwrap();
        first.push(stat(&panel, 0));
        last.push(stat(&panel, 2));
    }
    let p = ks_two_sample_pvalue(first, last);
    assert!(p > 1e-3, "two-sample KS p = {p}");
}

#[test]
fn drift_shifts_only_test_series() {
    let spec = SynthSpec {
        n_train: 2,
        n_cal: 3,
        n_test: 4,
        horizon: 6,
        seed: 9,
        ..SynthSpec::default()
    };
    let base = generate_panel(&spec).unwrap();
    let drifted = generate_panel(&SynthSpec { drift: 2.5, ..spec }).unwrap();
    for i in 0..base.n_series() {
        let shift = if base.split(i) == Split::Test { 2.5 } else { 0.0 };
        for t in 0..6 {
            assert_eq!(drifted.y(i)[t], base.y(i)[t] + shift);
            assert_eq!(drifted.y_hat(i)[t], seasonal_mean(t));
        }
    }
}

#[test]
fn linear_fit_recovers_oracle_noise_level() {
    let panel = generate_panel(&SynthSpec {
        n_train: 500,
        n_cal: 2_000,
        n_test: 1,
        horizon: 30,
        dependence: Dependence::Persistent { strength: 1.0 },
        drift: 0.0,
        seed: 21,
    })
    .unwrap();
    let fitted = fit_linear_forecaster(&panel, 3).unwrap();
    let cal = panel.indices(Split::Calibration);
    let mean_abs = |p: &ForecastPanel| {
        let total: f64 = cal.iter().flat_map(|&i| (3..30).map(move |t| (i, t))).map(|(i, t)| abs_residual(p, i, t)).sum();
        total / (cal.len() * 27) as f64
    };
    // E|s * eta| for s ~ LogNormal(0, 1), eta ~ N(0, 1)
    let closed_form = (2.0 / std::f64::consts::PI).sqrt() * 0.5f64.exp();
    let fit = mean_abs(&fitted);
    let oracle = mean_abs(&panel);
    assert!((fit / closed_form - 1.0).abs() <= 0.10, "fit {fit} vs closed form {closed_form}");
    assert!((fit / oracle - 1.0).abs() <= 0.10, "fit {fit} vs oracle forecasts {oracle}");
}
